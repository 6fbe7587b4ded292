import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surelab import autodiff as ad
from surelab.model import (
    MLP,
    ConvSpec,
    CosineClassifier,
    LinearClassifier,
    MLPSpec,
    build_classifier,
    copy_model,
    cosine_logits,
    linear_logits,
    load_checkpoint,
    max_cosine_confidence,
    save_checkpoint,
)

from oracles import max_rel_err


def test_identity_layer_passes_nonnegative_input():
    m = MLP(MLPSpec((2, 2)))
    m.params[0].data = np.eye(2)
    assert m.forward_features(np.array([1.0, 2.0])).data.tolist() == [1.0, 2.0]


def test_zero_weights_give_zero_features():
    m = MLP(MLPSpec((3, 5, 4)))
    for p in m.params:
        p.data[...] = 0
    assert not m.forward_features(np.array([1.0, -2.0, 7.0])).data.any()


def _straight_line(widths, seed, x, relu_last):
    # separate reimplementation: scalar loops, same He draw order
    rng = np.random.default_rng(seed)
    h = list(x)
    for li, (fin, fout) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.standard_normal((fout, fin)) * math.sqrt(2.0 / fin)
        z = [sum(w[i][j] * h[j] for j in range(fin)) for i in range(fout)]
        last = li == len(widths) - 2
        h = [max(0.0, v) for v in z] if (relu_last or not last) else z
    return h


def test_seed7_features_match_straight_line_oracle():
    x = np.array([1.0, -1.0])
    relu_all = MLP(MLPSpec((2, 4, 3)), np.random.default_rng(7)).forward_features(x).data
    assert np.allclose(relu_all, _straight_line((2, 4, 3), 7, x, True), atol=1e-12)
    # at this point every unit of the relu'd output is inactive
    assert relu_all.tolist() == [0.0, 0.0, 0.0]
    affine = MLP(MLPSpec((2, 4, 3), relu_features=False), np.random.default_rng(7)).forward_features(x).data
    assert np.allclose(affine, _straight_line((2, 4, 3), 7, x, False), atol=1e-12)
    assert np.allclose(affine, [-0.08447162067903388, -0.41669679046162894, -0.9213669262823154], atol=1e-12)


def test_forward_features_shape_mismatch():
    with pytest.raises(ValueError):
        MLP(MLPSpec((3, 2))).forward_features(np.ones(4))


@pytest.mark.parametrize("widths", [(3,), (3, 0), (), (2, -1, 3)])
def test_mlp_spec_rejects_bad_widths(widths):
    with pytest.raises(ValueError):
        MLPSpec(widths)


def _cos(protos, tau=8.0):
    c = CosineClassifier(protos.shape[1], protos.shape[0], tau)
    c.prototypes.data = np.array(protos, dtype=float)
    return c


def test_cosine_logits_examples():
    c = _cos(np.array([[2.0, 0.0], [0.0, 3.0]]))
    assert cosine_logits(c, [5.0, 0.0]).data[0] == 8.0
    assert cosine_logits(c, [5.0, 0.0]).data[1] == 0.0
    c2 = _cos(np.array([[1.0, 0.0], [0.0, 1.0]]), tau=2.0)
    assert abs(cosine_logits(c2, [1.0, 1.0]).data[0] - 2 / math.sqrt(2)) < 1e-12
    assert abs(cosine_logits(c2, [1.0, 1.0]).data[0] - 1.41421) < 1e-5


def test_cosine_degenerate_inputs():
    c = _cos(np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ad.DegenerateVectorError, match="feature"):
        cosine_logits(c, [0.0, 0.0])
    c.prototypes.data[1] = 0
    with pytest.raises(ad.DegenerateVectorError, match="prototype"):
        cosine_logits(c, [1.0, 0.0])


def test_cosine_classifier_invariants_at_init():
    with pytest.raises(ValueError):
        CosineClassifier(4, 1)
    with pytest.raises(ValueError):
        CosineClassifier(4, 3, tau=0.0)
    c = CosineClassifier(6, 5, rng=np.random.default_rng(1))
    assert np.allclose(np.linalg.norm(c.prototypes.data, axis=1), 1.0, atol=1e-12)
    assert c.params[0].name == "head.prototypes" and len(c.params) == 1


def test_linear_logits_examples():
    h = LinearClassifier(2, 2)
    h.weight.data = np.array([[1.0, 2.0], [3.0, 4.0]])
    h.bias.data = np.array([0.0, 1.0])
    assert linear_logits(h, [1.0, 1.0]).data.tolist() == [3.0, 8.0]
    h.weight.data = np.zeros((2, 2))
    assert linear_logits(h, [5.0, -1.0]).data.tolist() == [0.0, 1.0]
    h.weight.data, h.bias.data = np.eye(2), np.zeros(2)
    assert linear_logits(h, [5.0, -1.0]).data.tolist() == [5.0, -1.0]
    with pytest.raises(ValueError):
        linear_logits(h, [1.0, 2.0, 3.0])


vec = st.lists(st.floats(-10, 10), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=150, deadline=None)
@given(vec, st.floats(1e-3, 1e3), st.integers(0, 2), st.integers(0, 10**6))
def test_cosine_scale_invariance(f, c, k, seed):
    head = CosineClassifier(4, 3, 8.0, np.random.default_rng(seed))
    f = np.array(f)
    base = cosine_logits(head, f).data
    assert np.max(np.abs(cosine_logits(head, c * f).data - base)) <= 1e-9
    head.prototypes.data[k] *= c
    rescaled = cosine_logits(head, f).data
    assert np.max(np.abs(rescaled - base)) <= 1e-9
    assert np.argmax(rescaled) == np.argmax(base)
    assert np.all(np.abs(base) <= 8.0 + 1e-12)


@settings(max_examples=150, deadline=None)
@given(st.floats(0.1, 20), st.integers(2, 12), st.integers(0, 10**6))
def test_cosine_max_confidence_bound(tau, k, seed):
    rng = np.random.default_rng(seed)
    head = CosineClassifier(5, k, tau, rng)
    f = rng.standard_normal((16, 5))
    f[0] = head.prototypes.data[0]  # the most confident feature possible for class 0
    p = ad.softmax(cosine_logits(head, f)).data.max(axis=1)
    assert np.all(p <= max_cosine_confidence(tau, k) + 1e-12)


def test_max_cosine_confidence_value():
    assert max_cosine_confidence(8.0, 10) == pytest.approx(math.exp(8) / (math.exp(8) + 9 * math.exp(-8)))


@pytest.mark.parametrize("head", ["cosine", "linear"])
def test_gradients_through_full_classifier(head):
    from surelab.losses import cross_entropy, one_hot

    rng = np.random.default_rng(2)
    m = build_classifier(MLPSpec((3, 5, 4), relu_features=False), 3, head, 4.0, seed=3)
    x, y = rng.standard_normal((6, 3)), one_hot(rng.integers(0, 3, 6), 3)
    assert max_rel_err(lambda: cross_entropy(m(x), y), m.parameters()) < 1e-5


def test_conv_classifier_gradients():
    from surelab.losses import cross_entropy, one_hot

    rng = np.random.default_rng(4)
    m = build_classifier(ConvSpec((2, 4, 4), (3, 3), 4), 3, "cosine", 4.0, seed=1)
    x, y = rng.standard_normal((3, 32)), one_hot([0, 1, 2], 3)
    assert max_rel_err(lambda: cross_entropy(m(x), y), m.parameters()) < 1e-5


def test_unique_parameter_names():
    m = build_classifier(MLPSpec((4, 6, 5)), 3)
    names = [p.name for p in m.parameters()]
    assert len(names) == len(set(names))
    assert names == ["backbone.0.weight", "backbone.0.bias", "backbone.1.weight", "backbone.1.bias", "head.prototypes"]


@pytest.mark.parametrize(
    "spec,head",
    [
        (MLPSpec((4, 7, 5)), "cosine"),
        (MLPSpec((4, 5), relu_features=False), "linear"),
        (ConvSpec((1, 3, 3), (2, 3), 4), "cosine"),
    ],
)
def test_checkpoint_round_trips_bitwise(tmp_path, spec, head):
    m = build_classifier(spec, 3, head, tau=3.3, seed=9)
    rng = np.random.default_rng(0)
    for p in m.parameters():  # awkward values: subnormals, signed zero, long mantissas
        p.data = rng.standard_normal(p.shape) * 10.0 ** rng.integers(-310, 300, p.shape)
    m.parameters()[0].data.reshape(-1)[0] = -0.0
    path = save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(path)
    assert back.describe() == m.describe()
    for a, b in zip(m.parameters(), back.parameters()):
        assert a.name == b.name and a.data.tobytes() == b.data.tobytes()
    assert copy_model(m).state_dict().keys() == m.state_dict().keys()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_load_state_dict_checks_keys_and_shapes():
    m = build_classifier(MLPSpec((2, 3)), 2)
    s = m.state_dict()
    s["head.prototypes"] = np.zeros((5, 5))
    with pytest.raises(ValueError):
        m.load_state_dict(s)
    with pytest.raises(KeyError):
        m.load_state_dict({})
