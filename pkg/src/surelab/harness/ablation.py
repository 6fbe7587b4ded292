"""Component ablation grids over the five recipe components."""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, validate
from .training import RunManifest, TrainingDiverged, run_training

log = logging.getLogger(__name__)

COMPONENTS = ("crl", "mix", "sam", "swa", "csc")


def apply_toggles(base: ExperimentConfig, on: dict[str, bool]) -> ExperimentConfig:
    """Switch components of ``base`` on or off.

    An enabled loss term keeps the base weight (1 if the base has it at 0);
    SAM keeps the base radius (0.05 if the base has it at 0).
    """
    changes = {}
    if "crl" in on:
        changes["lambda_crl"] = (base.lambda_crl or 1.0) if on["crl"] else 0.0
    if "mix" in on:
        changes["lambda_mix"] = (base.lambda_mix or 1.0) if on["mix"] else 0.0
    if "sam" in on:
        changes["rho"] = (base.rho or 0.05) if on["sam"] else 0.0
    if "swa" in on:
        changes["swa"] = bool(on["swa"])
    if "csc" in on:
        changes["head"] = "cosine" if on["csc"] else "linear"
    return base.replace(**changes)


def component_flags(cfg: ExperimentConfig) -> dict[str, bool]:
    """Which of the five components a resolved config actually uses."""
    return {
        "crl": cfg.lambda_crl > 0,
        "mix": cfg.lambda_mix > 0,
        "sam": cfg.rho > 0,
        "swa": bool(cfg.swa) and cfg.swa_start < cfg.epochs,
        "csc": cfg.head == "cosine",
    }


@dataclass
class GridRow:
    toggles: dict[str, bool]
    fingerprint: str
    reports: list[dict[str, float]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def stat(self, metric: str) -> tuple[float, float]:
        vals = [r[metric] for r in self.reports]
        if not vals:
            return float("nan"), float("nan")
        return float(np.mean(vals)), float(np.std(vals))

    def median(self, metric: str) -> float:
        vals = [r[metric] for r in self.reports]
        return float(np.median(vals)) if vals else float("nan")

    @property
    def label(self) -> str:
        on = [c for c in COMPONENTS if self.toggles.get(c)]
        return "+".join(on) if on else "baseline"


def _run_one(cfg: ExperimentConfig) -> tuple[Optional[dict[str, float]], Optional[str]]:
    try:
        _, manifest = run_training(cfg)
    except TrainingDiverged as e:
        return None, f"seed {cfg.seed}: diverged: {e}"
    except Exception as e:  # a failed cell must not stop the grid
        return None, f"seed {cfg.seed}: {type(e).__name__}: {e}"
    return manifest.reports["test"], None


def grid_combinations(components: Sequence[str] = COMPONENTS) -> list[dict[str, bool]]:
    return [dict(zip(components, bits)) for bits in itertools.product((False, True), repeat=len(components))]


def run_ablation_grid(
    base: ExperimentConfig,
    combinations: Optional[Iterable[dict[str, bool]]] = None,
    seeds: Sequence[int] = (0, 1, 2),
    workers: int = 1,
    sort_by: str = "aurc",
) -> list[GridRow]:
    """Train every requested component combination over ``seeds``.

    Cells with identical resolved configs are computed once and shared.
    Rows come back sorted by the mean of ``sort_by`` (ascending for aurc
    and fpr95, descending otherwise).
    """
    validate(base)
    combos = list(combinations) if combinations is not None else grid_combinations()
    rows = []
    row_cfgs: list[ExperimentConfig] = []
    jobs: dict[str, ExperimentConfig] = {}
    for on in combos:
        cfg0 = apply_toggles(base, on)
        row = GridRow(component_flags(cfg0), cfg0.fingerprint())
        row_cfgs.append(cfg0)
        rows.append(row)
        for s in seeds:
            cfg = cfg0.replace(seed=int(s))
            jobs.setdefault(cfg.fingerprint(), cfg)
    keys = list(jobs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_run_one, [jobs[k] for k in keys]))
    else:
        outs = [_run_one(jobs[k]) for k in keys]
    results = dict(zip(keys, outs))
    for row, cfg0 in zip(rows, row_cfgs):
        for s in seeds:
            rep, err = results[cfg0.replace(seed=int(s)).fingerprint()]
            if err:
                row.errors.append(err)
                log.warning("grid cell %s failed: %s", row.label, err)
            else:
                row.reports.append(rep)
    sign = 1.0 if sort_by in ("aurc", "fpr95") else -1.0
    rows.sort(key=lambda r: (np.nan_to_num(sign * r.stat(sort_by)[0], nan=np.inf), r.label))
    return rows


def format_grid(rows: Sequence[GridRow]) -> str:
    """Plain-text table: one row per combination, mean ± std per metric."""
    head = "  ".join(f"{c:>3}" for c in COMPONENTS)
    lines = [f"{head}  {'acc':>13}  {'aurc x1e3':>15}  {'auroc':>13}  {'fpr95':>13}"]
    for r in rows:
        flags = "  ".join(f"{'x' if r.toggles.get(c) else '.':>3}" for c in COMPONENTS)
        cells = []
        for metric, scale in (("accuracy", 100), ("aurc", 1e3), ("auroc", 100), ("fpr95", 100)):
            m, s = r.stat(metric)
            cells.append(f"{m * scale:7.2f}±{s * scale:5.2f}")
        lines.append(f"{flags}  " + "  ".join(f"{c:>13}" for c in cells) + (f"  ({len(r.errors)} failed)" if r.errors else ""))
    return "\n".join(lines)


def grid_csv_rows(rows: Sequence[GridRow]) -> list[list]:
    out = [list(COMPONENTS) + ["n_runs", "acc_mean", "acc_std", "aurc_x1000_mean", "aurc_x1000_std", "auroc_mean", "auroc_std", "fpr95_mean", "fpr95_std"]]
    for r in rows:
        line = [int(bool(r.toggles.get(c))) for c in COMPONENTS] + [len(r.reports)]
        for metric, scale in (("accuracy", 1), ("aurc", 1e3), ("auroc", 1), ("fpr95", 1)):
            m, s = r.stat(metric)
            line += [m * scale, s * scale]
        out.append(line)
    return out
