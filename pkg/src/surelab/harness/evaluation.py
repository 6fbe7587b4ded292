"""Clean and corruption-shift evaluation of a trained classifier."""
from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from ..data import CorruptionSpec, Dataset, corrupt
from ..metrics import MetricReport, RecordArrays, evaluate_records, records_from_probs
from ..model import Classifier

SEVERITIES = (1, 2, 3, 4, 5)


def predict_records(model: Classifier, ds: Dataset, batch_size: int = 1024) -> RecordArrays:
    if ds.dim != model.input_dim:
        raise ValueError(f"dataset dim {ds.dim} != model input {model.input_dim}")
    probs = np.concatenate(
        [model.predict_proba(ds.inputs[i : i + batch_size]) for i in range(0, len(ds), batch_size)]
    )
    return records_from_probs(probs, ds.labels)


def corruption_key(kind: str, severity: int) -> str:
    return f"{kind}@{severity}"


def run_eval(
    model: Classifier,
    ds: Dataset,
    corruptions: Iterable[str] = (),
    seed: int = 0,
    severities: Iterable[int] = SEVERITIES,
    clip: Optional[tuple[float, float]] = None,
) -> dict[str, MetricReport]:
    """Metric reports for the clean set and every (corruption, severity) pair.

    Keys: ``clean``, ``<kind>@<severity>``, and when any corruption ran,
    ``corrupted_mean`` (plain average of the per-pair reports).
    """
    reports = {"clean": evaluate_records(predict_records(model, ds))}
    scale = float(np.std(ds.inputs)) or 1.0
    shifted = []
    for i, kind in enumerate(corruptions):
        for sev in severities:
            cds = corrupt(ds, CorruptionSpec(kind, sev), seed=seed * 1000 + i * 10 + sev, clip=clip, feature_scale=scale)
            rep = evaluate_records(predict_records(model, cds))
            reports[corruption_key(kind, sev)] = rep
            shifted.append(rep)
    if shifted:
        reports["corrupted_mean"] = MetricReport(
            *(float(np.nanmean([getattr(r, f) for r in shifted])) for f in ("accuracy", "aurc", "auroc", "fpr95"))
        )
    return reports
