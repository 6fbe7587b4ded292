"""The full training loop and the experiment driver around it."""
from __future__ import annotations

import json
import logging
import platform
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .. import __version__
from .. import autodiff as ad
from ..data import (
    Dataset,
    NoiseSpec,
    apply_long_tail,
    gen_gaussian_blobs,
    gen_two_moons,
    inject_label_noise,
    read_cifar10_binary,
    train_val_split,
)
from ..losses import (
    CorrectnessHistory,
    DivergenceError,
    LossWeights,
    MixupConfig,
    crl_batch_loss,
    cross_entropy,
    draw_mixup,
    mixup_pair,
    one_hot,
    ring_pairing,
    total_loss,
    update_correctness_history,
)
from ..metrics import MetricReport, aurc, balanced_accuracy, evaluate_records
from ..model import Classifier, ConvSpec, MLPSpec, build_classifier
from ..optim import SAMConfig, SGD, SGDConfig, LRSchedule, SWAState, epoch_lr, sam_step, swa_finalize, swa_update
from ..reweight import ReweightMap, capture_uncertainty_scores, reweight_stage
from .config import ExperimentConfig, validate
from .evaluation import predict_records, run_eval

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite value; ``manifest`` holds the diagnostics."""

    def __init__(self, message: str, manifest: "RunManifest"):
        super().__init__(message)
        self.manifest = manifest


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


@dataclass
class RunManifest:
    run_id: str
    config: dict[str, Any]
    version: str
    seed: int
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    reports: dict[str, dict[str, float]] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    status: str = "ok"

    def report(self, key: str = "test") -> MetricReport:
        return MetricReport(**self.reports[key])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def metrics_only(self) -> dict[str, Any]:
        """Everything that must reproduce exactly for a fixed config and seed."""
        return {"reports": self.reports, "extras": self.extras, "counters": self.counters}


@dataclass
class TrainResult:
    model: Classifier
    final_model: Classifier
    manifest: RunManifest
    splits: Splits
    test_records: Any = None
    stage1_model: Optional[Classifier] = None


def build_datasets(cfg: ExperimentConfig, warnings: Optional[list[str]] = None) -> Splits:
    """Train/val/test splits for a config; deterministic in the data seed."""
    warnings = warnings if warnings is not None else []
    seed = cfg.effective_data_seed
    if cfg.dataset == "blobs":
        pool = gen_gaussian_blobs(cfg.num_classes, cfg.per_class + cfg.test_per_class, cfg.dim, cfg.gap, seed)
        frac = cfg.test_per_class / (cfg.per_class + cfg.test_per_class)
        train_pool, test, _ = train_val_split(pool, frac, seed + 7919)
    elif cfg.dataset == "moons":
        n_train = 2 * cfg.per_class
        pool = gen_two_moons(n_train + 2 * cfg.test_per_class, cfg.moons_noise, seed)
        frac = cfg.test_per_class / (cfg.per_class + cfg.test_per_class)
        train_pool, test, _ = train_val_split(pool, frac, seed + 7919)
    else:
        train_pool = read_cifar10_binary(cfg.cifar_path)
        if cfg.cifar_test_path:
            test = read_cifar10_binary(cfg.cifar_test_path)
        else:
            train_pool, test, _ = train_val_split(train_pool, 1.0 / 6.0, seed + 7919)
        if cfg.cifar_limit:
            rng = np.random.default_rng(seed)
            train_pool = train_pool.subset(np.sort(rng.permutation(len(train_pool))[: cfg.cifar_limit]))
    if cfg.imbalance_factor > 1 and cfg.split_after_long_tail:
        train_pool, profile = apply_long_tail(train_pool, cfg.imbalance_factor, seed + 1)
        train, val, info = train_val_split(train_pool, cfg.val_fraction, seed + 2)
    else:
        train, val, info = train_val_split(train_pool, cfg.val_fraction, seed + 2)
        if cfg.imbalance_factor > 1:
            train, profile = apply_long_tail(train, cfg.imbalance_factor, seed + 1)
    warnings.extend(info.warnings)
    if cfg.noise_rate > 0:
        train = inject_label_noise(train, NoiseSpec(cfg.noise_rate), seed + 3)
        val = inject_label_noise(val, NoiseSpec(cfg.noise_rate), seed + 4)
    return Splits(train.reindexed(), val, test)


def build_model(cfg: ExperimentConfig, ds: Dataset) -> Classifier:
    widths = cfg.hidden_widths
    if cfg.backbone == "conv":
        if ds.image_shape is None:
            raise ValueError("conv backbone needs image-shaped inputs")
        ch = tuple(int(c) for c in cfg.conv_channels.split(","))
        spec: Union[MLPSpec, ConvSpec] = ConvSpec(ds.image_shape, ch, widths[-1])
    else:
        spec = MLPSpec((ds.dim,) + widths, relu_features=cfg.feature_relu)
    return build_classifier(spec, cfg.num_classes, cfg.head, cfg.tau, seed=cfg.seed)


def _val_score(cfg: ExperimentConfig, model: Classifier, val: Dataset) -> float:
    rec = predict_records(model, val)
    if cfg.select == "val_acc":
        return -float(np.mean(rec.correct))
    return aurc(rec)


def train_model(
    cfg: ExperimentConfig,
    model: Classifier,
    train: Dataset,
    val: Optional[Dataset] = None,
    counters: Optional[Counter] = None,
) -> tuple[Classifier, int, list[dict[str, float]]]:
    """Run the recipe on ``model`` in place (ending with the averaged weights).

    Per batch: clean cross-entropy, mixup cross-entropy on partner-shuffled
    pairs, ranking loss against the correctness history, combined and
    stepped with SAM. Per epoch: SWA snapshot and validation-based selection.

    Returns the selected model (a copy, or ``model`` itself when selection
    is off), the selected epoch, and per-epoch logs.
    """
    counters = counters if counters is not None else Counter()
    params = model.parameters()
    k = model.num_classes
    opt = SGD(params, SGDConfig(cfg.lr, cfg.momentum, cfg.weight_decay))
    sched = LRSchedule(cfg.lr, cfg.lr_min, cfg.epochs)
    swa = SWAState(cfg.swa_start, cfg.swa_lr) if cfg.swa and cfg.swa_start < cfg.epochs else None
    sam = SAMConfig(cfg.rho)
    mix = MixupConfig(cfg.beta, enabled=cfg.lambda_mix > 0)
    weights = LossWeights(cfg.lambda_mix, cfg.lambda_crl)
    history = CorrectnessHistory.empty(len(train))
    rng = np.random.default_rng([cfg.seed, 17])
    x_all = train.inputs
    y_all = one_hot(train.labels, k)
    n = len(train)
    n_batches = max(1, -(-n // cfg.batch_size))
    if cfg.head == "cosine":
        counters["cosine_head"] += 1

    best_state, best_score, best_epoch = None, np.inf, cfg.epochs - 1
    epoch_log: list[dict[str, float]] = []
    for epoch in range(cfg.epochs):
        lr = epoch_lr(sched, epoch, swa)
        order = rng.permutation(n)
        losses = []
        for idx in np.array_split(order, n_batches):
            if len(idx) < 2:
                continue
            xb, yb = x_all[idx], y_all[idx]
            draw = draw_mixup(len(idx), mix, rng) if mix.enabled else None
            use_crl = cfg.lambda_crl > 0 and history.has_history(idx)
            c = history.correctness(idx) if use_crl else None
            partner = ring_pairing(len(idx), rng) if use_crl else None
            first_pass: dict[str, np.ndarray] = {}

            def closure():
                with ad.Tape() as tape:
                    logits = model(xb)
                    if not np.all(np.isfinite(logits.data)):
                        raise DivergenceError(f"non-finite logits in epoch {epoch}")
                    if "logits" not in first_pass:
                        first_pass["logits"] = logits.data
                    l_ce = cross_entropy(logits, yb)
                    l_mix = l_crl = None
                    mix_logits = None
                    if draw is not None:
                        x_mix, y_mix = mixup_pair(xb, yb, xb[draw.perm], yb[draw.perm], draw.m)
                        mix_logits = model(x_mix)
                        l_mix = cross_entropy(mix_logits, y_mix)
                        counters["mixup_terms"] += 1
                    if use_crl:
                        conf = ad.max_(ad.softmax(logits))
                        l_crl = crl_batch_loss(c, conf, partner)
                        if cfg.crl_on_mixup and mix_logits is not None:
                            c_mix = draw.m * c + (1 - draw.m) * c[draw.perm]
                            conf_mix = ad.max_(ad.softmax(mix_logits))
                            l_crl = (l_crl + crl_batch_loss(c_mix, conf_mix, partner)) * 0.5
                        counters["crl_terms"] += 1
                    loss = total_loss(l_ce, l_mix, l_crl, weights)
                counters["forward_backward"] += 1
                return loss, ad.backward(tape, loss, params)

            info = sam_step(params, closure, opt, sam, lr)
            if sam.rho > 0:
                counters["sam_second_pass"] += 1
            update_correctness_history(history, idx, first_pass["logits"], train.labels[idx])
            losses.append(info.loss)

        if swa is not None and epoch >= swa.start_epoch:
            swa_update(swa, model.state_dict(), epoch)
            counters["swa_updates"] += 1
        entry = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)) if losses else float("nan")}
        if val is not None and cfg.select != "final" and len(val):
            current = model.state_dict()
            if swa is not None and swa.count:
                model.load_state_dict(swa.averaged)
            score = _val_score(cfg, model, val)
            entry["val_score"] = score
            if score < best_score:
                best_score, best_epoch, best_state = score, epoch, model.state_dict()
            model.load_state_dict(current)
        epoch_log.append(entry)

    if swa is not None and swa.count:
        swa_finalize(swa, model)
    if best_state is None:
        return model, cfg.epochs - 1, epoch_log
    selected = build_classifier(model.backbone.spec, k, cfg.head, cfg.tau)
    selected.load_state_dict(best_state)
    return selected, best_epoch, epoch_log


def _report_dict(rep: MetricReport) -> dict[str, float]:
    return {k: float(v) for k, v in rep.as_dict().items()}


def run_experiment(cfg: ExperimentConfig) -> TrainResult:
    validate(cfg)
    t0 = time.perf_counter()
    run_id = cfg.run_id or f"run-{cfg.fingerprint()}-s{cfg.seed}"
    manifest = RunManifest(run_id=run_id, config=cfg.to_dict(), version=__version__, seed=cfg.seed)
    manifest.extras["platform"] = platform.platform()
    from ..kernels import BACKEND

    manifest.extras["kernel_backend"] = BACKEND
    splits = build_datasets(cfg, manifest.warnings)
    manifest.extras["train_class_counts"] = splits.train.class_counts().tolist()
    manifest.timings["data"] = time.perf_counter() - t0

    counters: Counter = Counter()
    model = build_model(cfg, splits.train)
    t1 = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            selected, best_epoch, epoch_log = train_model(cfg, model, splits.train, splits.val, counters)
    except (DivergenceError, ad.NonFiniteError, FloatingPointError) as e:
        manifest.status = "diverged"
        manifest.warnings.append(f"training diverged: {e}")
        manifest.counters = dict(counters)
        manifest.timings["train"] = time.perf_counter() - t1
        raise TrainingDiverged(str(e), manifest) from e
    manifest.timings["train"] = time.perf_counter() - t1
    manifest.extras["selected_epoch"] = best_epoch
    manifest.extras["epoch_log"] = epoch_log

    stage1 = None
    if cfg.reweight:
        # stage 2 continues from the averaged stage-1 weights
        stage1 = model
        t2 = time.perf_counter()
        stage2 = build_classifier(model.backbone.spec, cfg.num_classes, cfg.head, cfg.tau)
        stage2.load_state_dict(model.state_dict())
        scores = capture_uncertainty_scores(stage2, splits.train)
        res = reweight_stage(
            stage2,
            splits.train,
            scores,
            ReweightMap(cfg.reweight_map, cfg.reweight_param),
            epochs=cfg.reweight_epochs,
            lr=cfg.reweight_lr,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
        )
        manifest.warnings.extend(sorted(set(res.warnings)))
        counters["reweight_steps"] += len(res.losses)
        manifest.timings["reweight"] = time.perf_counter() - t2
        rec1 = predict_records(model, splits.test)
        manifest.reports["stage1_test"] = _report_dict(evaluate_records(rec1))
        manifest.extras["stage1_balanced_accuracy"] = balanced_accuracy(rec1.predicted, rec1.true_label, cfg.num_classes)
        final_model = stage2
        selected = stage2
    else:
        final_model = model

    t3 = time.perf_counter()
    reports = run_eval(selected, splits.test, cfg.corruption_kinds, seed=cfg.effective_data_seed)
    test_records = predict_records(selected, splits.test)
    manifest.reports["test"] = _report_dict(reports.pop("clean"))
    for key, rep in reports.items():
        manifest.reports[key] = _report_dict(rep)
    manifest.extras["balanced_accuracy"] = balanced_accuracy(
        test_records.predicted, test_records.true_label, cfg.num_classes
    )
    if final_model is not selected:
        manifest.reports["test_final"] = _report_dict(evaluate_records(predict_records(final_model, splits.test)))
    if len(splits.val):
        manifest.reports["val"] = _report_dict(evaluate_records(predict_records(selected, splits.val)))
    manifest.timings["eval"] = time.perf_counter() - t3
    manifest.timings["total"] = time.perf_counter() - t0
    manifest.counters = dict(counters)
    return TrainResult(selected, final_model, manifest, splits, test_records, stage1)


def run_training(cfg: ExperimentConfig) -> tuple[Classifier, RunManifest]:
    res = run_experiment(cfg)
    return res.model, res.manifest
