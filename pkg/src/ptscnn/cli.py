"""Command-line entry point.

Subcommands:

* ``gen-data``   - write a synthetic train/test dataset pair
* ``train``      - fit a model from a config/preset on a dataset file
* ``eval``       - score a trained run on a dataset file
* ``rf-report``  - print the receptive-field table of a config
* ``dump-te``    - export the temporal-encoding correlation matrix as CSV

Every run writes ``manifest.json`` (config hash, seed, versions) into the
output directory. Exit codes: 0 success, 1 invalid arguments or inputs,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .data import (Dataset, GeneratorConfig, NormStats, ParseError,
                   apply_minmax, generate_synthetic, load_dataset,
                   minmax_stats, save_dataset)
from .evaluation import evaluate
from .models import ModelConfig, build_model, load_config, preset_names
from .temporal_encoding import te_correlation
from .training import TrainConfig, history_to_csv, train


def _config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, seed: int, config_text: str,
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config_sha256": _config_hash(config_text),
        "ptscnn_version": __version__,
        "precision": np.dtype(T.get_default_dtype()).name,
    }
    manifest.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ValueError(f"output directory {out} is not empty; pass --force to reuse")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    out = _prepare_out(args.out, args.force)
    cfg = GeneratorConfig(n_train=args.n_train, n_test=args.n_test)
    train_ds, test_ds = generate_synthetic(cfg, args.seed)
    save_dataset(out / "train.ptsc", train_ds)
    save_dataset(out / "test.ptsc", test_ds)
    _write_manifest(out, "gen-data", args.seed, json.dumps(asdict(cfg)),
                    {"n_train": len(train_ds), "n_test": len(test_ds)})
    print(f"wrote {out / 'train.ptsc'} ({len(train_ds)} records) and "
          f"{out / 'test.ptsc'} ({len(test_ds)} records)")
    return 0


def _resolve_model_config(args_config: str, dataset: Dataset) -> ModelConfig:
    cfg = load_config(args_config)
    return cfg.resolved(dataset.meta.channels, dataset.meta.classes,
                        dataset.meta.t_max)


def cmd_train(args) -> int:
    out = _prepare_out(args.out, args.force)
    dataset = load_dataset(args.data)
    cfg = _resolve_model_config(args.config, dataset)
    stats = minmax_stats(dataset.records)
    dataset = Dataset(dataset.meta, apply_minmax(dataset.records, stats))

    if args.protocol_preset == "trajectory":
        tcfg = TrainConfig.trajectory_protocol(
            seed=args.seed, batch_size=args.batch_size,
            **({"epochs": args.epochs} if args.epochs else {}))
    else:
        tcfg = TrainConfig.archive_protocol(
            seed=args.seed, batch_size=args.batch_size,
            **({"epochs": args.epochs} if args.epochs else {}))

    model = build_model(cfg, args.seed)
    result = train(model, dataset, tcfg, abort_dump_path=out / "diagnostic.ckpt")

    model.save(out / "last.ckpt")
    result.load_best(model)
    model.save(out / "best.ckpt")
    history_to_csv(result.history, out / "history.csv")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    (out / "norm_stats.json").write_text(json.dumps(stats.to_dict()) + "\n")
    _write_manifest(out, "train", args.seed, cfg.to_json(), {
        "data": str(args.data),
        "epochs_run": len(result.history),
        "best_epoch": result.best_epoch,
        "protocol_preset": args.protocol_preset,
        "batch_size": tcfg.batch_size,
        "stopped_early": result.stopped_early,
    })
    print(f"trained {cfg.name or args.config}: {len(result.history)} epochs, "
          f"best at {result.best_epoch}; artifacts in {out}")
    return 0


def _load_run(checkpoint: str):
    ckpt_path = Path(checkpoint)
    run_dir = ckpt_path.parent
    cfg = ModelConfig.from_json((run_dir / "config.json").read_text())
    stats = NormStats.from_dict(json.loads((run_dir / "norm_stats.json").read_text()))
    model = build_model(cfg, seed=0)
    model.load(ckpt_path)
    return model, stats


def cmd_eval(args) -> int:
    out = _prepare_out(args.out, args.force)
    model, stats = _load_run(args.checkpoint)
    dataset = load_dataset(args.data)
    dataset = Dataset(dataset.meta, apply_minmax(dataset.records, stats))
    reports = evaluate(model, dataset, protocol=args.protocol, seed=args.seed)
    payload = {view: r.to_dict() for view, r in reports.items()}
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    for view, r in reports.items():
        print(r.render())
    if args.dump_te_correlation:
        if model.te is None:
            raise ValueError("model has no temporal encoding to dump")
        corr = te_correlation(model.te)
        np.savetxt(out / "te_correlation.csv", corr, delimiter=",")
        print(f"wrote {out / 'te_correlation.csv'}")
    _write_manifest(out, "eval", args.seed, model.cfg.to_json(),
                    {"checkpoint": str(args.checkpoint), "protocol": args.protocol})
    return 0


def cmd_rf_report(args) -> int:
    cfg = load_config(args.config)
    if not cfg.is_resolved:
        cfg = cfg.resolved(1, 2, 1024)  # geometry does not depend on these
    model = build_model(cfg, seed=0)
    report = model.rf_report
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.render())
    return 0


def cmd_dump_te(args) -> int:
    out = _prepare_out(args.out, args.force)
    model, _ = _load_run(args.checkpoint)
    if model.te is None:
        raise ValueError("model has no temporal encoding to dump")
    corr = te_correlation(model.te)
    np.savetxt(out / "te_correlation.csv", corr, delimiter=",")
    print(f"wrote {out / 'te_correlation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ptscnn",
        description="Classify partial (variable-length, variable-timestamp) time series",
    )
    p.add_argument("--precision", choices=("f32", "f64"), default="f64",
                   help="floating-point width for all tensors")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset pair")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-train", type=int, default=2000)
    g.add_argument("--n-test", type=int, default=2000)
    g.add_argument("--force", action="store_true")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True,
                   help=f"config JSON path or preset name ({', '.join(preset_names())})")
    t.add_argument("--data", required=True, help="training dataset (.ptsc)")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=None,
                   help="override the protocol's epoch budget")
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--protocol-preset", choices=("trajectory", "archive"),
                   default="trajectory")
    t.add_argument("--force", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("--checkpoint", required=True,
                   help="checkpoint file written by train (best.ckpt or last.ckpt)")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--protocol", choices=("complete", "half_crop", "both"),
                   default="complete")
    e.add_argument("--dump-te-correlation", action="store_true")
    e.add_argument("--force", action="store_true")
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("rf-report", help="print the receptive-field table")
    r.add_argument("--config", required=True)
    r.add_argument("--json", action="store_true")
    r.set_defaults(fn=cmd_rf_report)

    d = sub.add_parser("dump-te", help="export the temporal-encoding correlation")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--force", action="store_true")
    d.set_defaults(fn=cmd_dump_te)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    T.set_default_dtype(args.precision)
    try:
        return args.fn(args)
    except (ValueError, ParseError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
