"""Command-line entry point: ``rvt <subcommand> [--config FILE] [--seed N] [--out PATH]``.

Exit codes: 0 success, 1 failed check or numeric failure, 2 configuration
or usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from rvt.errors import ConfigError, DataError, RVTError, UsageError
from rvt.harness.config import RunConfig, load_config
from rvt.harness.data import Dataset, make_synthetic_dataset, save_dataset
from rvt.harness.selftest import run_gradcheck
from rvt.harness.train import check_compatible, dataset_from_spec, resolve_dataset, train
from rvt.model.accounting import count_flops, count_params, flops_breakdown
from rvt.model.checkpoint import load_checkpoint
from rvt.robustness.attacks import ATTACKS, AttackConfig
from rvt.robustness.corruptions import CORRUPTION_KINDS, CorruptionSpec, corrupt
from rvt.robustness.metrics import EvalReport, attack_label, compute_mce, evaluate, write_mce

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse that exits with the configuration-error code and prints usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _run_config(args) -> RunConfig:
    if args.config is None:
        raise ConfigError("--config is required for this subcommand")
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "dataset", None):
        changes["dataset"] = args.dataset
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out if args.out else (cfg.output if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _eval_inputs(args, cfg: RunConfig):
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.output) / "model.rvtw"
    try:
        model = load_checkpoint(ckpt)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {ckpt}: {exc}") from exc
    ds = resolve_dataset(cfg)
    check_compatible(model, ds)
    return model, ds


def cmd_gen_data(args) -> int:
    seed = 0 if args.seed is None else args.seed
    ds = make_synthetic_dataset(seed, args.per_class, args.size)
    out = Path(args.out or "synthetic.rvtd")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    print(f"wrote {len(ds)} images ({ds.num_classes} classes, {args.size}x{args.size}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    if args.epochs is not None:
        cfg = cfg.replace(optimizer=type(cfg.optimizer)(**{**cfg.optimizer.to_dict(), "epochs": args.epochs}))
    out = _out_dir(args, cfg)
    start = time.perf_counter()
    result = train(cfg, out_dir=out)
    last = result.history[-1] if result.history else {}
    summary = {"epochs": len(result.history), "seconds": round(time.perf_counter() - start, 3), **{k: v for k, v in last.items() if k != "epoch"}}
    _write_json(out / "train_summary.json", summary)
    print(f"trained {cfg.optimizer.epochs} epochs; checkpoint {out / 'model.rvtw'}; final {json.dumps(last)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    model, ds = _eval_inputs(args, cfg)
    x, y = ds.as_float(model.dtype), ds.labels
    attacks = [(kind, cfg.attack) for kind in ("fgsm", "pgd")]
    report = evaluate(model, x, y, attacks=attacks, seed=cfg.seed, batch_size=cfg.optimizer.batch)
    report.write_csv(out / "report.csv")
    print(f"clean error {report.clean_err:.4f}")
    for name, acc in sorted(report.robust_acc.items()):
        print(f"robust accuracy {name}: {acc:.4f}")
    if args.baseline:
        base_path = Path(args.baseline)
        if base_path.suffix == ".csv":
            baseline = EvalReport.read_csv(base_path)
        else:
            base_model = load_checkpoint(base_path)
            check_compatible(base_model, ds)
            baseline = evaluate(base_model, ds.as_float(base_model.dtype), y, seed=cfg.seed, batch_size=cfg.optimizer.batch)
        mce = compute_mce(report, baseline)
        write_mce(mce, out / "mce.txt")
        print(f"mCE {mce:.4f}")
    else:
        print("no --baseline given; mCE not computed")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    model, ds = _eval_inputs(args, cfg)
    acfg = cfg.attack
    if args.epsilon is not None:
        acfg = AttackConfig.from_dict({**acfg.to_dict(), "epsilon": args.epsilon})
    x, y = ds.as_float(model.dtype), ds.labels.astype(np.int64)
    report = evaluate(model, x, y, attacks=[(args.kind, acfg)], corruptions=[], seed=cfg.seed, batch_size=cfg.optimizer.batch)
    name = attack_label(args.kind, acfg)
    report.write_csv(out / "attack.csv")
    clean_acc = 1.0 - report.clean_err
    _write_json(out / "attack.json", {"attack": name, "clean_acc": clean_acc, "robust_acc": report.robust_acc[name]})
    print(f"{name}: clean accuracy {clean_acc:.4f}, robust accuracy {report.robust_acc[name]:.4f}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = _run_config(args) if args.config else None
    source = args.dataset or (cfg.dataset if cfg else None)
    if source is None:
        raise ConfigError("corrupt needs --dataset or --config")
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    ds = dataset_from_spec(source, seed, cfg.model.image_size if cfg else 32)
    spec = CorruptionSpec(args.kind, args.severity)
    x = ds.images.astype(np.float64) / 255.0
    xc = corrupt(x.transpose(0, 3, 1, 2), spec, np.random.default_rng([seed, CORRUPTION_KINDS.index(spec.kind), spec.severity]))
    pixels = np.round(np.clip(xc.transpose(0, 2, 3, 1), 0.0, 1.0) * 255.0).astype(np.uint8)
    out = Path(args.out or f"{spec.kind}_{spec.severity}.rvtd")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(Dataset(pixels, ds.labels, ds.num_classes), out)
    print(f"wrote {len(ds)} images with {spec.kind} severity {spec.severity} (parameter {spec.param}) to {out}")
    return EXIT_OK


def cmd_flops(args) -> int:
    if args.config is None:
        raise ConfigError("--config is required for this subcommand")
    cfg = load_config(args.config).model
    macs = count_flops(cfg, args.resolution)
    params = count_params(cfg)
    payload = {"macs": macs, "params": params, "resolution": args.resolution or cfg.image_size, "breakdown": flops_breakdown(cfg, args.resolution)}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, payload)
    print(f"params {params} ({params / 1e6:.3f}M)")
    print(f"macs {macs} ({macs / 1e9:.4f}G)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_gradcheck(seed=seed, log=print)
    failed = [r for r in results if not r.passed]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_json(out, [{"op": r.name, "dtype": r.dtype, "rel_err": r.error, "tol": r.tolerance, "passed": r.passed} for r in results])
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (or bare model config / preset name)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    p = _Parser(prog="rvt", description="Robust vision transformer toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", parents=[common], help="write the synthetic 4-class dataset")
    s.add_argument("--per-class", type=int, default=64)
    s.add_argument("--size", type=int, default=32)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train a model from a run config")
    s.add_argument("--dataset", help="RVTD file or synthetic:N (overrides the config)")
    s.add_argument("--epochs", type=int)
    s.set_defaults(fn=cmd_train)

    for name, fn, text in (("eval", cmd_eval, "clean, corruption and attack evaluation"), ("attack", cmd_attack, "robust accuracy under one attack")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--checkpoint", help="RVTW file (default: <output>/model.rvtw)")
        s.add_argument("--dataset", help="RVTD file or synthetic:N (overrides the config)")
        s.set_defaults(fn=fn)
        if name == "eval":
            s.add_argument("--baseline", help="baseline report CSV or RVTW checkpoint for mCE")
        else:
            s.add_argument("--kind", choices=sorted(ATTACKS), default="fgsm")
            s.add_argument("--epsilon", type=float, help="override epsilon (1/255 units)")

    s = sub.add_parser("corrupt", parents=[common], help="write a corrupted copy of a dataset")
    s.add_argument("--dataset", help="RVTD file or synthetic:N")
    s.add_argument("--kind", choices=CORRUPTION_KINDS, required=True)
    s.add_argument("--severity", type=int, choices=range(1, 6), required=True)
    s.set_defaults(fn=cmd_corrupt)

    s = sub.add_parser("flops", parents=[common], help="parameter and MAC counts")
    s.add_argument("--resolution", type=int)
    s.set_defaults(fn=cmd_flops)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RVTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
