"""Spiking and conventional networks under FGSM-family adversarial attacks."""
from .ann import AnnModel, LayerSpec, TrainConfig, accuracy, forward, loss_and_grads, parse_architecture, train
from .attacks import AdvExample, AttackConfig, ann_adv, clip_eps, fgsm, ifgsm, rfgsm, snn_adv
from .conversion import build_transformed_ann, convert
from .data import Dataset, load_dataset
from .harness import EvalReport, ExperimentConfig, ScenarioSpec, emit_report, run_matrix
from .persistence import load_model, save_model
from .snn import (
    NeuronParams,
    SnnModel,
    SpikeTrain,
    activation_trace,
    neuron_step,
    poisson_encode,
    rate_decode,
    snn_accuracy,
    snn_forward,
    surrogate_grad,
    train_snn_bp,
)
from .tensor import SeededRng

__version__ = "0.1.0"
