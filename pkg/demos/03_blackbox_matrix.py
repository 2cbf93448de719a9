"""
Whitebox and blackbox comparison
================================

Train the six models (targets and their differently initialised twins)
and evaluate the 4 x 3 scenario grid for one attack. Takes about seven
minutes on one core; pass a directory to keep the trained models.
"""
import logging
import sys

from snnadv import harness
from snnadv.attacks import AttackConfig

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

cfg = harness.ExperimentConfig(seed=0)
train, test = harness.load_data(cfg.data)
models = harness.train_family(cfg, train, cache_dir=sys.argv[1] if len(sys.argv) > 1 else None)

report = harness.run_matrix(models, [AttackConfig("fgsm", 32 / 255, seed=0)], test, cfg.seed)

# accuracy loss in points, scenarios down, targets across
print(f"{'':10}" + "".join(f"{t:>9}" for t in harness.TARGETS))
for scenario in harness.SCENARIOS:
    cells = [report.select(scenario=scenario, target=t)[0].acc_loss for t in harness.TARGETS]
    print(f"{scenario:10}" + "".join(f"{100 * c:9.1f}" for c in cells))
