import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surelab import autodiff as ad
from surelab.data import Dataset, gen_gaussian_blobs
from surelab.losses import cross_entropy, one_hot
from surelab.model import LinearClassifier, MLPSpec, build_classifier, copy_model
from surelab.optim import SGD, SGDConfig
from surelab.reweight import (
    MAP_KINDS,
    ReweightMap,
    capture_uncertainty_scores,
    normalize_batch_weights,
    raw_weight,
    read_scores_csv,
    reweight_stage,
    write_scores_csv,
)


def test_raw_weight_examples():
    assert raw_weight(ReweightMap("exp", 1.0), 0.0) == 1.0
    assert raw_weight(ReweightMap("power", 2.0), 0.5) == 0.25
    assert raw_weight(ReweightMap("threshold", 0.5), 0.6) == 0.0
    assert raw_weight(ReweightMap("threshold", 0.5), 0.4) == 0.6
    assert raw_weight(ReweightMap("linear"), 0.3) == 0.7
    assert abs(raw_weight(ReweightMap("exp", 2.0), 0.5) - math.exp(-1)) < 1e-16
    with pytest.raises(ValueError):
        raw_weight(ReweightMap(), 1.1)


@pytest.mark.parametrize(
    "kind,param", [("exp", 0.0), ("exp", -1.0), ("threshold", 0.0), ("threshold", 1.0), ("power", 0.5), ("warp", None)]
)
def test_map_parameter_validation(kind, param):
    with pytest.raises(ValueError):
        ReweightMap(kind, param)


def test_default_map_is_exp_t1():
    assert ReweightMap() == ReweightMap("exp", 1.0)


@pytest.mark.parametrize("rmap", [ReweightMap(k) for k in MAP_KINDS] + [ReweightMap("exp", 7.0), ReweightMap("power", 5.0)])
def test_maps_nonincreasing_and_nonnegative(rmap):
    s = np.linspace(0, 1, 1001)
    w = raw_weight(rmap, s)
    assert np.all(w >= 0) and np.all(np.diff(w) <= 0)


def test_normalize_examples():
    w = normalize_batch_weights([1.0, 0.5])
    assert np.allclose(w, [2 / 3, 1 / 3], atol=1e-16)
    raw = raw_weight(ReweightMap("exp", 1.0), np.array([0.0, math.log(2)]))
    assert np.allclose(raw, [1.0, 0.5], atol=1e-16)
    assert normalize_batch_weights([0.3] * 4).tolist() == [0.25] * 4
    assert normalize_batch_weights([0.01]).tolist() == [1.0]
    warnings = []
    assert normalize_batch_weights([0.0, 0.0], warnings).tolist() == [0.5, 0.5] and warnings
    with pytest.raises(ValueError):
        normalize_batch_weights([])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=30), st.floats(1e-3, 1e3))
def test_normalize_sums_to_one_and_scale_invariant(raw, c):
    w = normalize_batch_weights(raw)
    assert abs(w.sum() - 1) <= 1e-12
    assert np.allclose(normalize_batch_weights(np.array(raw) * c), w, rtol=1e-12, atol=1e-15)


def test_exp_small_t_is_uniform():
    s = np.random.default_rng(0).random(64)
    w = normalize_batch_weights(raw_weight(ReweightMap("exp", 1e-8), s))
    assert np.max(np.abs(w - 1 / 64)) <= 1e-6


# -- score capture --


def _model_and_data(seed=0):
    ds = gen_gaussian_blobs(3, 40, 4, 2.0, seed)
    return build_classifier(MLPSpec((4, 32, 5), relu_features=False), 3, "cosine", 8.0, seed=seed), ds


def test_capture_uniform_model_gives_one_over_k():
    m = build_classifier(MLPSpec((4, 5)), 4, "linear")
    for p in m.parameters():
        p.data[...] = 0
    ds = gen_gaussian_blobs(4, 5, 4, 1.0, 0)
    assert np.allclose(capture_uncertainty_scores(m, ds), 0.25, atol=1e-15)


def test_capture_is_deterministic_and_checks_dims():
    m, ds = _model_and_data()
    a, b = capture_uncertainty_scores(m, ds), capture_uncertainty_scores(m, ds)
    assert a.tobytes() == b.tobytes() and a.shape == (len(ds),)
    with pytest.raises(ValueError):
        capture_uncertainty_scores(m, gen_gaussian_blobs(3, 4, 6, 1.0, 0))


def test_capture_hand_built_two_class_model():
    m = build_classifier(MLPSpec((2, 2), relu_features=False), 2, "linear")
    m.backbone.params[0].data, m.backbone.params[1].data = np.eye(2), np.zeros(2)
    m.head.weight.data, m.head.bias.data = np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2)
    x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, math.log(3)]])
    ds = Dataset(x, [0, 0, 1], [0, 1, 2], 2)
    want = [0.5, math.exp(2) / (math.exp(2) + 1), 0.75]
    assert np.allclose(capture_uncertainty_scores(m, ds), want, atol=1e-15)


# -- stage 2 --


def _plain_finetune(model, ds, epochs, lr, batch_size, seed, momentum=0.9, weight_decay=5e-4):
    rng = np.random.default_rng(seed)
    opt = SGD(model.parameters(), SGDConfig(lr, momentum, weight_decay))
    y = one_hot(ds.labels, model.num_classes)
    for _ in range(epochs):
        order = rng.permutation(len(ds))
        for i in range(0, len(ds), batch_size):
            idx = order[i : i + batch_size]
            with ad.Tape() as t:
                loss = cross_entropy(model(ds.inputs[idx]), y[idx])
            opt.step(ad.backward(t, loss, model.parameters()))


@pytest.mark.parametrize("score", [0.0, 0.37, 1.0])
def test_uniform_scores_equal_unweighted_finetuning_bitwise(score):
    m1, ds = _model_and_data(3)
    m2 = copy_model(m1)
    reweight_stage(m1, ds, np.full(len(ds), score), ReweightMap("exp", 1.0), epochs=3, lr=5e-3, batch_size=32, seed=4)
    _plain_finetune(m2, ds, 3, 5e-3, 32, 4)
    for k, v in m1.state_dict().items():
        assert v.tobytes() == m2.state_dict()[k].tobytes(), k


def test_one_uniform_step_equals_one_sgd_step():
    m1, ds = _model_and_data(5)
    m2 = copy_model(m1)
    reweight_stage(m1, ds, np.full(len(ds), 0.5), epochs=1, lr=0.01, batch_size=len(ds), seed=0)
    _plain_finetune(m2, ds, 1, 0.01, len(ds), 0)
    for k, v in m1.state_dict().items():
        assert v.tobytes() == m2.state_dict()[k].tobytes()


def test_threshold_map_all_zero_batch_falls_back_with_warning():
    m, ds = _model_and_data(1)
    res = reweight_stage(m, ds, np.full(len(ds), 0.9), ReweightMap("threshold", 0.5), epochs=1, batch_size=16)
    assert res.warnings and all(np.isfinite(res.losses))


def test_weighted_loss_favours_low_confidence_samples():
    m, ds = _model_and_data(2)
    scores = np.where(ds.labels == 2, 0.0, 1.0)
    w = raw_weight(ReweightMap("exp", 5.0), scores)
    assert w[ds.labels == 2].min() > 100 * w[ds.labels != 2].max()


def test_scores_csv_round_trip(tmp_path):
    _, ds = _model_and_data()
    s = np.random.default_rng(0).random(len(ds))
    p = write_scores_csv(ds, s, tmp_path / "scores.csv")
    assert p.read_text().splitlines()[0] == "sample_id,score"
    ids, back = read_scores_csv(p)
    assert np.array_equal(ids, ds.sample_ids) and back.tobytes() == s.tobytes()


def test_stage_rejects_wrong_score_count():
    m, ds = _model_and_data()
    with pytest.raises(ValueError):
        reweight_stage(m, ds, np.zeros(3))
