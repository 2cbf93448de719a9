"""Whitebox / blackbox evaluation of ANN, converted SNN and spike-trained SNN targets.

Six models take part: ``M_ANN``, ``M_SNN1`` (converted from ``M_ANN``) and
``M_SNN2`` (spike-trained) are the targets; their twins ``M_ANNx``,
``M_SNN1x`` and ``M_SNN2x`` differ only in the initialisation seed and serve
as blackbox sources. Every attack configuration yields a 4 x 3 grid of
(scenario, target) cells; each adversarial set is crafted once per source
and shared by all targets it is used against.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from decimal import Decimal
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

import numpy as np

from . import ann, snn
from .ann import AnnModel, TrainConfig
from .attacks import AttackConfig, ann_adv, rate_inputs, snn_adv, stack
from .conversion import convert
from .data import load_dataset
from .errors import ConfigError, FormatError
from .persistence import load_model, save_model
from .snn import NeuronParams, SnnModel
from .tensor import SeededRng

log = logging.getLogger(__name__)

TARGETS = ("M_ANN", "M_SNN1", "M_SNN2")
TWINS = {"M_ANN": "M_ANNx", "M_SNN1": "M_SNN1x", "M_SNN2": "M_SNN2x"}
MODEL_NAMES = TARGETS + tuple(TWINS.values())
SCENARIOS = ("whitebox", "bb-snn1", "bb-snn2", "bb-ann")
BLACKBOX_SOURCE = {"bb-snn1": "M_SNN1x", "bb-snn2": "M_SNN2x", "bb-ann": "M_ANNx"}
COLUMNS = ("scenario", "method", "epsilon", "steps", "source", "target", "clean_acc", "adv_acc", "acc_loss")

# top-level stream ids under SeededRng(seed)
INIT_STREAM, CALIB_STREAM, EVAL_STREAM = 0, 1, 2
_FAMILY = {"ann": 0, "snn2": 1}
_MODEL_ID = {name: i for i, name in enumerate(MODEL_NAMES)}


# -- configuration ----------------------------------------------------------

@dataclass
class DataSpec:
    format: str = "mnist-idx"
    train: str = "tests/data/train-images-idx3-ubyte.gz"
    test: str = "tests/data/t10k-images-idx3-ubyte.gz"
    train_limit: int | None = 4000
    test_limit: int | None = 500
    train_labels: str | None = None
    test_labels: str | None = None


@dataclass
class SnnTrainSpec:
    T: int = 70
    tau: float = 100.0
    v_th: float = 1.0
    reset: str = "zero"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=5, learning_rate=0.1, anneal_epochs=(4,), batch_size=32))


@dataclass
class ConversionSpec:
    T: int = 500
    T_cal: int = 200
    calib_samples: int = 100
    reset: str = "subtract"


def _ann_default():
    return TrainConfig(epochs=50, learning_rate=0.1, anneal_epochs=(30, 42), batch_size=32)


@dataclass
class ExperimentConfig:
    """Everything one harness run needs; mirrors the JSON config file."""

    data: DataSpec = field(default_factory=DataSpec)
    architecture: str = "1x28x28-2s-16c5-2s-64fc-10o"
    dropout: float = 0.2
    seed: int = 0
    ann: TrainConfig = field(default_factory=_ann_default)
    snn: SnnTrainSpec = field(default_factory=SnnTrainSpec)
    conversion: ConversionSpec = field(default_factory=ConversionSpec)
    attacks: list = field(default_factory=list)
    domain_clamp: bool = False
    models: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "data" in d:
            d["data"] = DataSpec(**d["data"])
        if "ann" in d:
            d["ann"] = TrainConfig(**d["ann"])
        if "snn" in d:
            s = dict(d["snn"])
            if "train" in s:
                s["train"] = TrainConfig(**s["train"])
            d["snn"] = SnnTrainSpec(**s)
        if "conversion" in d:
            d["conversion"] = ConversionSpec(**d["conversion"])
        if "attacks" in d:
            d["attacks"] = [a if isinstance(a, AttackConfig) else AttackConfig(**a) for a in d["attacks"]]
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attacks"] = [a.to_dict() if isinstance(a, AttackConfig) else a for a in self.attacks]
        return d


def preset_attacks(seed: int = 0, epsilons=(8 / 255, 16 / 255, 32 / 255)):
    """FGSM, R-FGSM, 2-step I-FGSM and targeted 2-step I-FGSM at each epsilon."""
    out = []
    for method, steps, mode in (("fgsm", 1, "non-targeted"), ("rfgsm", 2, "non-targeted"),
                                ("ifgsm", 2, "non-targeted"), ("ifgsm", 2, "targeted-random")):
        out += [AttackConfig(method, eps, None, steps, mode, seed) for eps in epsilons]
    return out


# -- data and models --------------------------------------------------------

_CHECKOUT = Path(__file__).resolve().parents[2]


def _resolve(path):
    """Relative paths missing from the working directory are looked up in the source checkout."""
    if path is None:
        return None
    p = Path(path)
    if not p.is_absolute() and not p.exists() and (_CHECKOUT / p).exists():
        return _CHECKOUT / p
    return p


def load_data(spec: DataSpec):
    """Train and test splits; the test split is normalised with the training statistics."""
    train = load_dataset(_resolve(spec.train), spec.format, spec.train_limit, _resolve(spec.train_labels))
    test = load_dataset(_resolve(spec.test), spec.format, spec.test_limit, _resolve(spec.test_labels),
                        stats=train.stats)
    return train, test


def init_seed(seed: int, family: str, twin: int) -> int:
    gen = SeededRng(seed).child(INIT_STREAM).child(_FAMILY[family]).child(twin).generator()
    return int(gen.integers(2**63))


def _architecture(cfg: ExperimentConfig):
    return ann.parse_architecture(cfg.architecture, cfg.dropout, bias=False)


def train_ann_model(cfg: ExperimentConfig, train, twin: int = 0) -> AnnModel:
    shape, layers = _architecture(cfg)
    model = AnnModel.build(shape, layers, init_seed(cfg.seed, "ann", twin))
    return ann.train(model, train, cfg.ann)


def convert_model(cfg: ExperimentConfig, ann_model: AnnModel, train, twin: int = 0) -> SnnModel:
    c = cfg.conversion
    rng = SeededRng(cfg.seed).child(CALIB_STREAM).child(twin)
    model, _ = convert(ann_model, train.take(c.calib_samples), c.T_cal, rng, c.T, c.reset)
    return model


def train_snn_model(cfg: ExperimentConfig, train, twin: int = 0) -> SnnModel:
    s = cfg.snn
    shape, layers = _architecture(cfg)
    init = AnnModel.build(shape, layers, init_seed(cfg.seed, "snn2", twin))
    model = snn.spiking_model(init, NeuronParams.lif(s.v_th, s.tau, s.reset), s.T)
    return snn.train_snn_bp(model, train, s.train)


def family_key(cfg: ExperimentConfig) -> str:
    """Digest of every setting that influences the six trained models."""
    d = cfg.to_dict()
    for k in ("attacks", "models", "domain_clamp"):
        d.pop(k)
    d["data"].pop("test", None)
    d["data"].pop("test_labels", None)
    d["data"].pop("test_limit", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def train_family(cfg: ExperimentConfig, train, cache_dir=None) -> dict:
    """Train (or convert) all six models of the comparison.

    With ``cache_dir`` models are stored under a digest of the training
    settings and loaded from there on later calls.
    """
    folder = None if cache_dir is None else Path(cache_dir) / family_key(cfg)
    if folder is not None and all((folder / f"{n}.bin").exists() for n in MODEL_NAMES):
        try:
            return {n: load_model(folder / f"{n}.bin") for n in MODEL_NAMES}
        except FormatError as err:
            log.warning("ignoring model cache %s: %s", folder, err)
    models = {}
    for twin, suffix in ((0, ""), (1, "x")):
        log.info("training M_ANN%s", suffix)
        models["M_ANN" + suffix] = train_ann_model(cfg, train, twin)
        log.info("converting M_SNN1%s", suffix)
        models["M_SNN1" + suffix] = convert_model(cfg, models["M_ANN" + suffix], train, twin)
        log.info("training M_SNN2%s", suffix)
        models["M_SNN2" + suffix] = train_snn_model(cfg, train, twin)
    if folder is not None:
        folder.mkdir(parents=True, exist_ok=True)
        for name, model in models.items():
            save_model(model, folder / f"{name}.bin")
    return models


# -- scenarios and evaluation -----------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    target: str
    source: str
    attack: AttackConfig

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}")
        expected = self.target if self.scenario == "whitebox" else BLACKBOX_SOURCE[self.scenario]
        if self.source != expected:
            raise ConfigError(f"{self.scenario} with target {self.target} needs source {expected}, "
                              f"got {self.source}")


def scenario_grid(attack: AttackConfig, targets=TARGETS, scenarios=SCENARIOS):
    specs = []
    for scenario in scenarios:
        for target in targets:
            source = target if scenario == "whitebox" else BLACKBOX_SOURCE[scenario]
            specs.append(ScenarioSpec(scenario, target, source, attack))
    return specs


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    method: str
    epsilon: float
    steps: int
    source: str
    target: str
    clean_acc: float
    adv_acc: float
    acc_loss: float

    @classmethod
    def build(cls, spec: ScenarioSpec, clean: float, adv: float) -> "ReportRow":
        a = spec.attack
        return cls(spec.scenario, a.label, a.epsilon, a.steps, spec.source, spec.target,
                   clean, adv, clean - adv)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def select(self, **match):
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]


def eval_rng(seed: int, target: str) -> SeededRng:
    """Encoding streams used whenever ``target`` (a spiking model) is evaluated."""
    return SeededRng(seed).child(EVAL_STREAM).child(_MODEL_ID[target])


class Evaluator:
    """Evaluates scenario cells, caching clean accuracies and crafted sets.

    Adversarial images of spiking targets are re-encoded with the target's
    evaluation stream; magnitudes beyond 1 saturate at firing probability 1.
    """

    def __init__(self, models: dict, dataset, seed: int = 0, domain=None):
        self.models = models
        self.dataset = dataset
        self.seed = seed
        self.domain = domain
        self._clean = {}
        self._crafted = {}
        self._rates = {}

    def model(self, name):
        try:
            return self.models[name]
        except KeyError:
            raise ConfigError(f"model {name} is missing") from None

    def accuracy(self, target, x):
        model = self.model(target)
        if isinstance(model, AnnModel):
            pred = np.argmax(ann.forward(model, x), axis=1)
        else:
            scores = snn.snn_scores(model, np.clip(x, -1.0, 1.0), eval_rng(self.seed, target))
            pred = np.argmax(scores, axis=1)
        return float(np.mean(pred == self.dataset.y))

    def clean_accuracy(self, target):
        if target not in self._clean:
            self._clean[target] = self.accuracy(target, self.dataset.x)
        return self._clean[target]

    def crafted(self, source, cfg: AttackConfig):
        key = (source, cfg)
        if key not in self._crafted:
            model = self.model(source)
            if isinstance(model, AnnModel):
                examples = ann_adv(self.dataset, model, cfg, source, self.domain)
            else:
                rkey = (source, model.T, cfg.seed)
                if rkey not in self._rates:
                    self._rates[rkey] = rate_inputs(self.dataset.x, model.T, cfg)
                examples = snn_adv(self.dataset, model, cfg, model.T, source, self.domain, self._rates[rkey])
            self._crafted[key] = stack(examples)[1]
        return self._crafted[key]

    def evaluate(self, spec: ScenarioSpec) -> ReportRow:
        clean = self.clean_accuracy(spec.target)
        adv = self.accuracy(spec.target, self.crafted(spec.source, spec.attack))
        row = ReportRow.build(spec, clean, adv)
        log.info("%s %s eps=%.4f k=%d %s->%s clean=%.4f adv=%.4f", spec.scenario, row.method,
                 row.epsilon, row.steps, spec.source, spec.target, clean, adv)
        return row


def run_matrix(models: dict, attacks, dataset, seed: int = 0, domain=None,
               targets=TARGETS, scenarios=SCENARIOS) -> EvalReport:
    """Evaluate every (attack, scenario, target) cell; 12 rows per attack by default."""
    needed = set(targets)
    for scenario in scenarios:
        needed |= set(targets) if scenario == "whitebox" else {BLACKBOX_SOURCE[scenario]}
    missing = sorted(needed - set(models))
    if missing:
        raise ConfigError(f"missing models: {missing}")
    ev = Evaluator(models, dataset, seed, domain)
    report = EvalReport()
    for attack in attacks:
        for spec in scenario_grid(attack, targets, scenarios):
            report.rows.append(ev.evaluate(spec))
    return report


# -- report files -----------------------------------------------------------

def _csv_text(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in report.rows:
        clean, adv = f"{r.clean_acc:.4f}", f"{r.adv_acc:.4f}"
        # the written loss is the exact difference of the two written accuracies
        loss = Decimal(clean) - Decimal(adv)
        w.writerow([r.scenario, r.method, f"{r.epsilon:.4f}", r.steps, r.source, r.target, clean, adv, f"{loss:.4f}"])
    return buf.getvalue()


def _json_text(report: EvalReport) -> str:
    doc = {"columns": list(COLUMNS), "rows": [asdict(r) for r in report.rows]}
    return json.dumps(doc, indent=2) + "\n"


def emit_report(report: EvalReport, path, format: str = "csv"):
    if format == "csv":
        text = _csv_text(report)
    elif format == "json":
        text = _json_text(report)
    else:
        raise ConfigError(f"unknown report format {format!r}")
    Path(path).write_text(text)


def read_report(path, format: str | None = None) -> EvalReport:
    path = Path(path)
    format = format or ("json" if path.suffix == ".json" else "csv")
    text = path.read_text()
    if format == "json":
        return EvalReport([ReportRow(**r) for r in json.loads(text)["rows"]])
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(ReportRow(rec["scenario"], rec["method"], float(rec["epsilon"]), int(rec["steps"]),
                              rec["source"], rec["target"], float(rec["clean_acc"]),
                              float(rec["adv_acc"]), float(rec["acc_loss"])))
    return EvalReport(rows)
