"""Command-line entry point: ``snnadv <command> [options]``.

Model files live in a directory using the six standard names
(``M_ANN.bin``, ``M_SNN1x.bin``, ...) so ``matrix`` and ``eval`` can find
targets and sources.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .attacks import AttackConfig, ann_adv, snn_adv, stack
from .ann import AnnModel
from .data import save_image_set
from .errors import SnnAdvError
from .harness import ExperimentConfig
from .persistence import load_model, save_model

log = logging.getLogger("snnadv")


def _common(p):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--limit", type=int, help="number of records to read from the split in use")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="report format")
    p.add_argument("--domain-clamp", action="store_true", help="clamp adversarial images to the pixel range")
    p.add_argument("-v", "--verbose", action="store_true")


def _attack_args(p):
    p.add_argument("--method", choices=("fgsm", "rfgsm", "ifgsm"))
    p.add_argument("--epsilon", type=float, help="L-inf budget in normalised units (e.g. 0.0627 for 16/255)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--mode", default="non-targeted",
                   choices=("non-targeted", "targeted-random", "targeted-least-likely"))


def build_parser():
    parser = argparse.ArgumentParser(prog="snnadv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ann", help="train M_ANN (or its twin with --twin 1)")
    _common(p)
    p.add_argument("--twin", type=int, choices=(0, 1), default=0)

    p = sub.add_parser("train-snn", help="spike-based training of M_SNN2 (or its twin)")
    _common(p)
    p.add_argument("--twin", type=int, choices=(0, 1), default=0)

    p = sub.add_parser("convert", help="threshold-balance an ANN file into an IF network")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--twin", type=int, choices=(0, 1), default=0)

    p = sub.add_parser("craft", help="write an adversarial test set crafted on one model")
    _common(p)
    _attack_args(p)
    p.add_argument("--model", type=Path, required=True)

    p = sub.add_parser("eval", help="evaluate one scenario cell")
    _common(p)
    _attack_args(p)
    p.add_argument("--models", type=Path, required=True, help="directory of model files")
    p.add_argument("--scenario", choices=harness.SCENARIOS, required=True)
    p.add_argument("--target", choices=harness.TARGETS, required=True)

    p = sub.add_parser("matrix", help="whitebox/blackbox grid over every attack config")
    _common(p)
    _attack_args(p)
    p.add_argument("--models", type=Path, required=True, help="directory of model files")
    p.add_argument("--train", action="store_true", help="train and save the six models when missing")
    p.add_argument("--preset", action="store_true", help="use the preset attack grid")

    p = sub.add_parser("report", help="print or convert a report file")
    _common(p)
    p.add_argument("report", type=Path)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.domain_clamp:
        cfg.domain_clamp = True
    return cfg


def _train_split(cfg, args):
    if args.limit is not None:
        cfg.data.train_limit = args.limit
    return harness.load_data(cfg.data)[0]


def _test_split(cfg, args):
    if args.limit is not None:
        cfg.data.test_limit = args.limit
    return harness.load_data(cfg.data)


def _domain(cfg, data):
    return data.stats.domain(data.shape) if cfg.domain_clamp and data.stats else None


def _attacks(args, cfg):
    if args.method:
        if args.epsilon is None:
            raise SystemExit("--epsilon is required with --method")
        return [AttackConfig(args.method, args.epsilon, args.alpha, args.steps, args.mode, cfg.seed)]
    if getattr(args, "preset", False) or not cfg.attacks:
        return harness.preset_attacks(cfg.seed)
    return list(cfg.attacks)


def _need_out(args):
    if args.out is None:
        raise SystemExit("--out is required")
    return args.out


def cmd_train_ann(args):
    cfg = _config(args)
    model = harness.train_ann_model(cfg, _train_split(cfg, args), args.twin)
    save_model(model, _need_out(args))


def cmd_train_snn(args):
    cfg = _config(args)
    model = harness.train_snn_model(cfg, _train_split(cfg, args), args.twin)
    save_model(model, _need_out(args))


def cmd_convert(args):
    cfg = _config(args)
    model = harness.convert_model(cfg, load_model(args.model), _train_split(cfg, args), args.twin)
    save_model(model, _need_out(args))
    print(json.dumps({"thresholds": list(model.balance.thresholds), "T_cal": model.balance.T_cal,
                      "n_samples": model.balance.n_samples}))


def cmd_craft(args):
    cfg = _config(args)
    train, test = _test_split(cfg, args)
    attacks = _attacks(args, cfg)
    model = load_model(args.model)
    source = args.model.stem
    out = _need_out(args)
    for i, attack in enumerate(attacks):
        if isinstance(model, AnnModel):
            examples = ann_adv(test, model, attack, source, _domain(cfg, train))
        else:
            examples = snn_adv(test, model, attack, model.T, source, _domain(cfg, train))
        base, x_adv, y = stack(examples)
        folder = out if len(attacks) == 1 else out / f"{i:02d}-{attack.label}-{attack.epsilon:.4f}-k{attack.steps}"
        save_image_set(folder, x_adv, y, {"source": source, "attack": attack.to_dict(), "n": len(y)})
        log.info("wrote %d examples to %s", len(y), folder)


def _load_models(folder: Path, names):
    models = {}
    for name in names:
        path = folder / f"{name}.bin"
        if path.exists():
            models[name] = load_model(path)
    return models


def _write_report(report, args):
    if args.out is None:
        sys.stdout.write(harness._csv_text(report) if args.format == "csv" else harness._json_text(report))
    else:
        harness.emit_report(report, args.out, args.format)


def cmd_eval(args):
    cfg = _config(args)
    train, test = _test_split(cfg, args)
    attacks = _attacks(args, cfg)[:1]
    models = _load_models(args.models, harness.MODEL_NAMES)
    report = harness.run_matrix(models, attacks, test, cfg.seed, _domain(cfg, train),
                                targets=(args.target,), scenarios=(args.scenario,))
    _write_report(report, args)


def cmd_matrix(args):
    cfg = _config(args)
    train, test = _test_split(cfg, args)
    models = _load_models(args.models, harness.MODEL_NAMES)
    if args.train and len(models) < len(harness.MODEL_NAMES):
        models = harness.train_family(cfg, train)
        args.models.mkdir(parents=True, exist_ok=True)
        for name, model in models.items():
            save_model(model, args.models / f"{name}.bin")
    report = harness.run_matrix(models, _attacks(args, cfg), test, cfg.seed, _domain(cfg, train))
    _write_report(report, args)


def cmd_report(args):
    report = harness.read_report(args.report)
    if args.out is not None or args.format == "json":
        _write_report(report, args)
        return
    print(f"{'scenario':9} {'method':15} {'eps':>7} {'k':>2} {'source':8} {'target':7} "
          f"{'clean':>7} {'adv':>7} {'loss':>7}")
    for r in report.rows:
        print(f"{r.scenario:9} {r.method:15} {r.epsilon:7.4f} {r.steps:2d} {r.source:8} {r.target:7} "
              f"{r.clean_acc:7.4f} {r.adv_acc:7.4f} {r.acc_loss:7.4f}")


COMMANDS = {
    "train-ann": cmd_train_ann,
    "train-snn": cmd_train_snn,
    "convert": cmd_convert,
    "craft": cmd_craft,
    "eval": cmd_eval,
    "matrix": cmd_matrix,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (SnnAdvError, OSError, ValueError) as err:
        print(f"snnadv: error: {err}", file=sys.stderr)
        return 1
    return 0
