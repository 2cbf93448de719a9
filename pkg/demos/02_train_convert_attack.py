"""
Train, convert and attack
=========================

Train the small CNN on the bundled MNIST subset, balance it into an IF
network and see how FGSM at growing budgets hurts each of them.
Takes about a minute and a half.
"""
from pathlib import Path

import numpy as np

from snnadv import ann, snn
from snnadv.attacks import AttackConfig, ann_adv, snn_adv, stack
from snnadv.conversion import convert
from snnadv.data import load_dataset

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"
train = load_dataset(DATA / "train-images-idx3-ubyte.gz", limit=4000)
test = load_dataset(DATA / "t10k-images-idx3-ubyte.gz", limit=200, stats=train.stats)
print("train", train.x.shape, "test", test.x.shape, "pixel range", test.x.min(), test.x.max())

# the network: pool, one 5x5 conv, pool, a hidden dense layer, 10 outputs,
# with dropout after the hidden layers
shape, layers = ann.parse_architecture("1x28x28-2s-16c5-2s-64fc-10o", dropout_rate=0.2, bias=False)
model = ann.AnnModel.build(shape, layers, seed=1)
cfg = ann.TrainConfig(epochs=50, learning_rate=0.1, anneal_epochs=(30, 42), batch_size=32)
model = ann.train(model, train, cfg)
print("ANN test accuracy", ann.accuracy(model, test))

# threshold balancing on 100 training images
converted, report = convert(model, train.take(100), T_cal=200, rng=0, T=500)
print("balanced thresholds", np.round(report.thresholds, 3))
print("SNN test accuracy (T=500)", snn.snn_accuracy(converted, test, rng=1))

# FGSM on each model: the SNN is attacked through its transformed ANN on rate-decoded input
for eps in (8 / 255, 16 / 255, 32 / 255):
    attack = AttackConfig("fgsm", eps, seed=0)
    _, x_ann, _ = stack(ann_adv(test, model, attack))
    _, x_snn, _ = stack(snn_adv(test, converted, attack))
    acc_ann = ann.accuracy(model, test.with_images(x_ann))
    acc_snn = snn.snn_accuracy(converted, test.with_images(np.clip(x_snn, -1, 1)), rng=1)
    print(f"eps={eps * 255:.0f}/255  ANN whitebox acc {acc_ann:.3f}  SNN whitebox acc {acc_snn:.3f}")

# one perturbed digit, as characters
digit = x_ann[0, 0] - test.x[0, 0]
print("\n".join("".join("+" if v > 0 else "-" if v < 0 else " " for v in row[::2]) for row in digit[::2]))
