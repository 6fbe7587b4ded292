"""Command-line entry point: ``surelab {train,eval,ablate,report,metrics}``.

Exit codes: 0 success, 1 validation error, 2 divergence, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..data import DataError
from ..metrics import MetricError, evaluate_records, read_prediction_dump
from ..model import load_checkpoint, save_checkpoint
from .ablation import COMPONENTS, format_grid, grid_combinations, grid_csv_rows, run_ablation_grid
from .config import FIELD_TYPES, PRESETS, ConfigError, ExperimentConfig, from_mapping, read_config_file, validate, write_config_file
from .evaluation import predict_records, run_eval
from .report import emit_report, read_manifest, write_metrics_csv
from .training import TrainingDiverged, build_datasets, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("surelab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as divergence
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser, seed_required: bool = False) -> None:
    p.add_argument("--config", help="file of key = value lines")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named override set applied before --config")
    g = p.add_argument_group("config overrides (any ExperimentConfig key)")
    for key, t in FIELD_TYPES.items():
        if key == "seed":
            continue
        flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        g.add_argument(*flags, dest=f"cfg_{key}", metavar=t.__name__.upper(), default=None)
    p.add_argument("--seed", dest="cfg_seed", required=seed_required, default=None, metavar="INT")


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Preset, then config file, then command-line flags; later wins."""
    values: dict = {}
    if args.preset:
        values.update(PRESETS[args.preset])
    if args.config:
        values.update(read_config_file(args.config))
    for key in FIELD_TYPES:
        v = getattr(args, f"cfg_{key}", None)
        if v is not None:
            values[key] = v
    return validate(from_mapping(values))


def _out_dir(args, cfg: ExperimentConfig, default: str) -> Path:
    return Path(args.out or cfg.output_dir or default)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    try:
        res = run_experiment(cfg)
    except TrainingDiverged as e:
        out = _out_dir(args, cfg, f"runs/{cfg.run_id or 'diverged'}")
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(e.manifest.to_json() + "\n")
        print(f"training diverged: {e}; diagnostics in {out / 'manifest.json'}", file=sys.stderr)
        return EXIT_DIVERGED
    man = res.manifest
    out = _out_dir(args, cfg, f"runs/{man.run_id}")
    out.mkdir(parents=True, exist_ok=True)
    man.artifacts["checkpoint"] = str(save_checkpoint(res.model, out / "model.ckpt"))
    man.artifacts["config"] = str(write_config_file(cfg, out / "config.txt"))
    if res.final_model is not res.model:
        man.artifacts["checkpoint_final"] = str(save_checkpoint(res.final_model, out / "model_final.ckpt"))
    emit_report(man, out, res.test_records, svg=not args.no_svg)
    _print_reports(man.run_id, {k: man.report(k) for k in man.reports})
    print(f"artifacts in {out}")
    return EXIT_OK


def _print_reports(run_id: str, reports: dict) -> None:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["run_id", "split", "accuracy", "aurc_x1000", "auroc", "fpr95"])
    for key, r in reports.items():
        w.writerow([run_id, key, f"{r.accuracy:.6f}", f"{r.aurc_x1000:.6f}", f"{r.auroc:.6f}", f"{r.fpr95:.6f}"])


def cmd_eval(args) -> int:
    if args.predictions:
        rec = read_prediction_dump(args.predictions)
        rep = evaluate_records(rec)
        reports = {"predictions": rep}
        run_id = args.cfg_run_id or Path(args.predictions).stem
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint or --predictions")
        cfg = resolve_config(args)
        model = load_checkpoint(args.checkpoint)
        splits = build_datasets(cfg)
        split = getattr(splits, args.split)
        reports = run_eval(model, split, cfg.corruption_kinds, seed=cfg.effective_data_seed)
        run_id = cfg.run_id or Path(args.checkpoint).stem
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            from ..metrics import write_prediction_dump

            write_prediction_dump(predict_records(model, split), out / "predictions.csv")
    if args.out:
        rows = [(run_id if k in ("clean", "predictions") else f"{run_id}@{k}", r) for k, r in reports.items()]
        write_metrics_csv(rows, Path(args.out) / "metrics.csv")
    _print_reports(run_id, reports)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    comps = tuple(c.strip() for c in args.components.split(",") if c.strip())
    bad = [c for c in comps if c not in COMPONENTS]
    if bad:
        raise ConfigError(f"components: unknown {bad}; choose from {','.join(COMPONENTS)}")
    try:
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise ConfigError(f"seeds: expected comma-separated integers, got {args.seeds!r}") from None
    rows = run_ablation_grid(cfg, grid_combinations(comps), seeds, workers=args.workers)
    print(format_grid(rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "grid.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(grid_csv_rows(rows))
        print(f"grid written to {out / 'grid.csv'}")
    failed = sum(len(r.errors) for r in rows)
    if failed:
        print(f"{failed} run(s) failed", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    man = read_manifest(args.manifest)
    rec = read_prediction_dump(args.predictions) if args.predictions else None
    paths = emit_report(man, args.out, rec, split=args.split, svg=not args.no_svg)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    rec = read_prediction_dump(args.predictions)
    rep = evaluate_records(rec)
    run_id = args.run_id or Path(args.predictions).stem
    if args.out:
        write_metrics_csv([(run_id, rep)], args.out)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["run_id", "accuracy", "aurc_x1000", "auroc", "fpr95"])
    w.writerow([run_id, repr(rep.accuracy), repr(rep.aurc_x1000), repr(rep.auroc), repr(rep.fpr95)])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="surelab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one run and write its artifacts")
    _add_config_flags(t, seed_required=True)
    t.add_argument("--out", help="output directory (default runs/<run_id>)")
    t.add_argument("--no-svg", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, or score a prediction dump")
    _add_config_flags(e)
    e.add_argument("--checkpoint")
    e.add_argument("--predictions")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="component ablation grid")
    _add_config_flags(a)
    a.add_argument("--components", default=",".join(COMPONENTS))
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="re-emit report files from a manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--predictions")
    r.add_argument("--split", default="test")
    r.add_argument("--out", required=True)
    r.add_argument("--no-svg", action="store_true")
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("metrics", help="metrics from a confidence,predicted,true_label file")
    m.add_argument("predictions")
    m.add_argument("--run-id", dest="run_id")
    m.add_argument("--out", help="write a metrics CSV here")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        where = f" ({e.filename})" if getattr(e, "filename", None) else ""
        print(f"error: {e}{where}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, MetricError, DataError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
