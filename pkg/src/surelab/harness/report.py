"""Artifact emission: manifest JSON, metrics row, risk-coverage curve, histograms, SVG plot."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..metrics import MetricReport, RecordArrays, risk_coverage_curve, write_prediction_dump
from .training import RunManifest

METRICS_HEADER = ["run_id", "accuracy", "aurc_x1000", "auroc", "fpr95"]
CURVE_HEADER = ["coverage", "risk"]
HIST_HEADER = ["bin_lo", "bin_hi", "correct", "misclassified"]
N_BINS = 20


class ReportError(OSError):
    """A report file could not be written; the message carries the path."""


def _fmt(v: float) -> str:
    return repr(float(v))


def _open(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e.strerror or e}") from e


def write_metrics_csv(rows: list[tuple[str, MetricReport]], path: Union[str, Path]) -> Path:
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for run_id, rep in rows:
            w.writerow([run_id, _fmt(rep.accuracy), _fmt(rep.aurc_x1000), _fmt(rep.auroc), _fmt(rep.fpr95)])
    return path


def read_metrics_csv(path: Union[str, Path]) -> list[tuple[str, MetricReport]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        if next(r, None) != METRICS_HEADER:
            raise ValueError(f"{path}: header must be {','.join(METRICS_HEADER)}")
        out = []
        for row in r:
            if not row:
                continue
            acc, ax, au, fp = (float(v) for v in row[1:])
            out.append((row[0], MetricReport(acc, ax / 1000.0, au, fp)))
    return out


def write_curve_csv(records: RecordArrays, path: Union[str, Path]) -> Path:
    """One row per sample: coverage k/n and the selective risk of the top k."""
    curve = risk_coverage_curve(records)
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for c, r in zip(curve.coverage, curve.risk):
            w.writerow([_fmt(c), _fmt(r)])
    return path


def confidence_histogram(records: RecordArrays, bins: int = N_BINS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts of correct and misclassified samples per uniform bin over [0, 1].

    The last bin is closed, so a confidence of exactly 1 is counted.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    ok = records.correct
    good, _ = np.histogram(records.confidence[ok], bins=edges)
    bad, _ = np.histogram(records.confidence[~ok], bins=edges)
    return edges, good, bad


def write_histogram_csv(records: RecordArrays, path: Union[str, Path], bins: int = N_BINS) -> Path:
    edges, good, bad = confidence_histogram(records, bins)
    path = Path(path)
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(HIST_HEADER)
        for i in range(bins):
            w.writerow([_fmt(edges[i]), _fmt(edges[i + 1]), int(good[i]), int(bad[i])])
    return path


def curve_svg(records: RecordArrays, title: str = "", width: int = 360, height: int = 260) -> str:
    """Risk-coverage curve as a small standalone SVG document."""
    curve = risk_coverage_curve(records)
    m = 40
    top = max(float(curve.risk.max()) if len(curve) else 0.0, 1e-9)
    ymax = min(1.0, math.ceil(top * 10) / 10) or top

    def px(c, r):
        return m + c * (width - 2 * m), height - m - (r / ymax) * (height - 2 * m)

    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (px(c, r) for c, r in zip(curve.coverage, curve.risk)))
    x0, y0 = px(0, 0)
    x1, _ = px(1, 0)
    _, yt = px(0, ymax)
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{yt}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2}" y="{height - 8}" text-anchor="middle">coverage</text>',
        f'<text x="12" y="{(y0 + yt) / 2}" transform="rotate(-90 12 {(y0 + yt) / 2})" text-anchor="middle">selective risk</text>',
        f'<text x="{x0 - 4}" y="{y0 + 4}" text-anchor="end">0</text>',
        f'<text x="{x0 - 4}" y="{yt + 4}" text-anchor="end">{ymax:g}</text>',
        f'<text x="{x1}" y="{y0 + 14}" text-anchor="middle">1</text>',
        f'<text x="{width / 2}" y="16" text-anchor="middle">{title}</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{pts}"/>',
        "</svg>",
        "",
    ])


def emit_report(
    manifest: RunManifest,
    out_dir: Union[str, Path],
    records: Optional[RecordArrays] = None,
    split: str = "test",
    svg: bool = True,
) -> dict[str, Path]:
    """Write every artifact for one run into ``out_dir``.

    Without ``records`` only manifest.json and metrics.csv are produced.
    The manifest is written last so its ``artifacts`` map is complete.
    """
    out = Path(out_dir)
    paths: dict[str, Path] = {}
    if split not in manifest.reports:
        raise KeyError(f"manifest has no {split!r} report")
    paths["metrics"] = write_metrics_csv([(manifest.run_id, manifest.report(split))], out / "metrics.csv")
    if records is not None:
        paths["curve"] = write_curve_csv(records, out / "curve.csv")
        paths["histogram"] = write_histogram_csv(records, out / "histogram.csv")
        paths["predictions"] = write_prediction_dump(records, out / "predictions.csv")
        if svg:
            p = out / "curve.svg"
            try:
                p.write_text(curve_svg(records, title=manifest.run_id))
            except OSError as e:
                raise ReportError(f"cannot write {p}: {e.strerror or e}") from e
            paths["curve_svg"] = p
    manifest.artifacts.update({k: str(v) for k, v in paths.items()})
    paths["manifest"] = out / "manifest.json"
    manifest.artifacts["manifest"] = str(paths["manifest"])
    with _open(paths["manifest"]) as fh:
        fh.write(manifest.to_json() + "\n")
    return paths


def read_manifest(path: Union[str, Path]) -> RunManifest:
    return RunManifest.from_json(Path(path).read_text())
