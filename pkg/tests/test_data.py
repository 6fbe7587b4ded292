import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surelab.data import (
    CIFAR_RECORD_BYTES,
    CORRUPTIONS,
    CorruptionSpec,
    DataError,
    Dataset,
    NoiseSpec,
    apply_long_tail,
    corrupt,
    export_csv,
    gen_gaussian_blobs,
    gen_two_moons,
    import_csv,
    inject_label_noise,
    long_tail_counts,
    read_cifar10_binary,
    shift_brightness,
    train_val_split,
    write_cifar10_binary,
)


def _nearest_mean_accuracy(train, test):
    means = np.stack([train.inputs[train.labels == k].mean(axis=0) for k in range(train.num_classes)])
    d = ((test.inputs[:, None, :] - means[None]) ** 2).sum(-1)
    return float(np.mean(d.argmin(1) == test.labels))


def _logreg_accuracy(train, test, steps=300):
    # plain gradient-descent logistic regression, a linear model
    x = np.c_[train.inputs, np.ones(len(train))]
    w = np.zeros(x.shape[1])
    for _ in range(steps):
        p = 1 / (1 + np.exp(-x @ w))
        w -= 0.5 * x.T @ (p - train.labels) / len(x)
    xt = np.c_[test.inputs, np.ones(len(test))]
    return float(np.mean((xt @ w > 0) == test.labels))


# -- generators --


def test_blobs_separable_and_indistinguishable_limits():
    far = gen_gaussian_blobs(4, 100, 6, 60.0, seed=0)
    tr, te, _ = train_val_split(far, 0.5, 1)
    assert _nearest_mean_accuracy(tr, te) == 1.0
    accs = []
    for s in range(10):
        tr, te, _ = train_val_split(gen_gaussian_blobs(4, 100, 6, 0.0, seed=s), 0.5, s)
        accs.append(_nearest_mean_accuracy(tr, te))
    assert abs(np.mean(accs) - 0.25) < 0.05


def test_blob_means_are_gap_apart():
    ds = gen_gaussian_blobs(5, 4000, 8, 3.0, seed=2)
    means = np.stack([ds.inputs[ds.labels == k].mean(0) for k in range(5)])
    d = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(5, 1)]
    assert np.all(np.abs(d - 3.0) < 0.15)


def test_generators_are_deterministic():
    a, b = gen_gaussian_blobs(3, 10, 4, 2.0, 9), gen_gaussian_blobs(3, 10, 4, 2.0, 9)
    assert a.inputs.tobytes() == b.inputs.tobytes() and np.array_equal(a.labels, b.labels)
    c, d = gen_two_moons(40, 0.1, 9), gen_two_moons(40, 0.1, 9)
    assert c.inputs.tobytes() == d.inputs.tobytes()
    assert gen_gaussian_blobs(3, 10, 4, 2.0, 10).inputs.tobytes() != a.inputs.tobytes()


def test_two_moons_geometry_and_balance():
    ds = gen_two_moons(200, 0.0, seed=3)
    assert ds.class_counts().tolist() == [100, 100]
    up = ds.inputs[ds.labels == 0]
    lo = ds.inputs[ds.labels == 1] - np.array([1.0, 0.5])
    assert np.allclose(np.linalg.norm(up, axis=1), 1.0, atol=1e-9)
    assert np.allclose(np.linalg.norm(lo, axis=1), 1.0, atol=1e-9)
    with pytest.raises(DataError):
        gen_two_moons(7, 0.1, 0)


def test_noisy_moons_are_not_linearly_separable():
    tr, te, _ = train_val_split(gen_two_moons(2000, 0.3, seed=4), 0.3, 4)
    acc = _logreg_accuracy(tr, te)
    assert 0.6 < acc < 1.0


# -- long tail --


def test_long_tail_examples():
    assert long_tail_counts(5000, 10, 10)[-1] == 500
    assert long_tail_counts(100, 10, 100) == [100, 60, 36, 22, 13, 8, 5, 3, 2, 1]
    ds = gen_gaussian_blobs(10, 20, 4, 1.0, 0)
    same, prof = apply_long_tail(ds, 1.0, 0)
    assert same is ds and prof.counts == (20,) * 10


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 12), st.integers(20, 3000), st.floats(1, 50))
def test_long_tail_profile_properties(k, n, imf):
    c = long_tail_counts(n, k, imf)
    assert c[0] == n and all(b <= a for a, b in zip(c, c[1:])) and min(c) >= 1
    assert abs(n / c[-1] - imf) <= imf * 1.0 / c[-1] + 1e-9  # within one sample of the tail count


def test_apply_long_tail_subsamples_each_class():
    ds = gen_gaussian_blobs(5, 50, 3, 2.0, 1)
    lt, prof = apply_long_tail(ds, 10.0, seed=4)
    assert lt.class_counts().tolist() == list(prof.counts) == long_tail_counts(50, 5, 10.0)
    assert set(lt.sample_ids.tolist()) <= set(ds.sample_ids.tolist())
    lt2, _ = apply_long_tail(ds, 10.0, seed=4)
    assert np.array_equal(lt.sample_ids, lt2.sample_ids)
    with pytest.raises(DataError):
        apply_long_tail(ds, 1000.0, 0)
    with pytest.raises(DataError):
        apply_long_tail(ds.subset(np.arange(7)), 2.0, 0)


# -- label noise --


def test_label_noise_examples():
    ds = gen_gaussian_blobs(10, 1000, 4, 1.0, 0)
    assert np.array_equal(inject_label_noise(ds, NoiseSpec(0.0), 1).labels, ds.labels)
    flipped_all = inject_label_noise(ds, NoiseSpec(1.0), 1)
    assert np.all(flipped_all.labels != ds.labels)
    noisy = inject_label_noise(ds, NoiseSpec(0.2), 2)
    frac = np.mean(noisy.labels != ds.labels)
    assert 0.18 <= frac <= 0.22
    assert noisy.inputs.tobytes() == ds.inputs.tobytes()
    assert np.array_equal(noisy.original_labels, ds.labels)
    with pytest.raises(DataError):
        NoiseSpec(1.5)


def test_label_noise_targets_are_uniform_over_other_classes():
    ds = Dataset(np.zeros((40000, 1)), np.zeros(40000, dtype=int), np.arange(40000), 5)
    counts = np.bincount(inject_label_noise(ds, NoiseSpec(1.0), 3).labels, minlength=5)
    assert counts[0] == 0 and np.all(np.abs(counts[1:] / 40000 - 0.25) < 0.01)


# -- corruptions --


@pytest.mark.parametrize("kind", CORRUPTIONS)
def test_corruption_severity_is_monotone(kind):
    ds = gen_gaussian_blobs(4, 200, 16, 3.0, 0)
    msd = [float(np.mean((corrupt(ds, CorruptionSpec(kind, s), seed=5).inputs - ds.inputs) ** 2)) for s in range(1, 6)]
    assert all(b > a for a, b in zip(msd, msd[1:])), msd
    c = corrupt(ds, CorruptionSpec(kind, 3), seed=5)
    assert len(c) == len(ds) and np.array_equal(c.labels, ds.labels)
    assert corrupt(ds, CorruptionSpec(kind, 3), seed=5).inputs.tobytes() == c.inputs.tobytes()


def test_image_corruptions_with_clipping():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.random((6, 3 * 8 * 8)), np.arange(6) % 10, np.arange(6), 10, image_shape=(3, 8, 8))
    for kind in CORRUPTIONS:
        msd = [float(np.mean((corrupt(ds, CorruptionSpec(kind, s), 1, clip=(0, 1)).inputs - ds.inputs) ** 2)) for s in (1, 5)]
        out = corrupt(ds, CorruptionSpec(kind, 5), 1, clip=(0, 1)).inputs
        assert out.min() >= 0 and out.max() <= 1 and msd[1] > msd[0]


def test_brightness_is_invertible_without_clipping():
    ds = gen_gaussian_blobs(3, 20, 5, 2.0, 0)
    back = shift_brightness(shift_brightness(ds, 0.7), -0.7)
    assert np.max(np.abs(back.inputs - ds.inputs)) <= 1e-9


def test_corruption_spec_validation():
    with pytest.raises(DataError):
        CorruptionSpec("fog", 1)
    with pytest.raises(DataError):
        CorruptionSpec("brightness", 6)
    one = Dataset(np.zeros((3, 1)), [0, 1, 0], [0, 1, 2], 2)
    with pytest.raises(DataError):
        corrupt(one, CorruptionSpec("box_blur", 1), 0)


# -- CIFAR-10 binary --


def _fixture_bytes():
    rng = np.random.default_rng(7)
    recs = []
    for label in (3, 0, 9):
        recs.append(bytes([label]) + rng.integers(0, 256, 3072, dtype=np.uint8).tobytes())
    return b"".join(recs)


def test_cifar_three_record_fixture_round_trips(tmp_path):
    raw = _fixture_bytes()
    p = tmp_path / "data_batch.bin"
    p.write_bytes(raw)
    ds = read_cifar10_binary(p)
    assert len(ds) == 3 and ds.labels.tolist() == [3, 0, 9] and ds.image_shape == (3, 32, 32)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
    # channel-major: pixel byte 1 + c*1024 + r*32 + col
    assert ds.inputs[1, 1024 + 5 * 32 + 7] == raw[CIFAR_RECORD_BYTES + 1 + 1024 + 5 * 32 + 7] / 255.0
    q = write_cifar10_binary(ds, tmp_path / "copy.bin")
    assert q.read_bytes() == raw


def test_cifar_all_white_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(bytes([3]) + bytes([255]) * 3072)
    ds = read_cifar10_binary(p)
    assert ds.labels.tolist() == [3] and np.all(ds.inputs == 1.0)


@pytest.mark.parametrize("size", [0, 3072, 3074, 2 * 3073 - 1])
def test_cifar_rejects_truncated(tmp_path, size):
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes(size))
    with pytest.raises(DataError, match="truncated"):
        read_cifar10_binary(p)


def test_cifar_rejects_bad_label(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes([10]) + bytes(3072))
    with pytest.raises(DataError, match="label"):
        read_cifar10_binary(p)


def test_cifar_record_arithmetic(tmp_path):
    assert 10000 * CIFAR_RECORD_BYTES == 30_730_000
    p = tmp_path / "batch.bin"
    rec = np.zeros((10000, CIFAR_RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = np.arange(10000) % 10
    rec.tofile(p)
    assert p.stat().st_size == 30_730_000
    ds = read_cifar10_binary(p)
    assert len(ds) == 10000 and ds.class_counts().tolist() == [1000] * 10


# -- splits and CSV --


def test_stratified_split_examples():
    ds = gen_gaussian_blobs(10, 100, 3, 1.0, 0)
    tr, va, info = train_val_split(ds, 0.1, seed=3)
    assert info.stratified and len(va) == 100 and va.class_counts().tolist() == [10] * 10
    assert not set(tr.sample_ids.tolist()) & set(va.sample_ids.tolist())
    assert sorted(tr.sample_ids.tolist() + va.sample_ids.tolist()) == list(range(1000))
    tr2, va2, _ = train_val_split(ds, 0.1, seed=3)
    assert np.array_equal(va.sample_ids, va2.sample_ids)


def test_split_falls_back_when_a_class_is_tiny():
    ds = Dataset(np.zeros((11, 1)), [0] * 10 + [1], np.arange(11), 2)
    tr, va, info = train_val_split(ds, 0.2, 0)
    assert not info.stratified and info.warnings
    assert len(tr) + len(va) == 11
    with pytest.raises(DataError):
        train_val_split(ds, 1.0, 0)


def test_csv_round_trip(tmp_path):
    ds = gen_gaussian_blobs(3, 7, 4, 2.0, 0)
    p = export_csv(ds, tmp_path / "ds.csv")
    assert p.read_text().splitlines()[0] == "sample_id,label,f0,f1,f2,f3"
    back = import_csv(p, 3)
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    assert np.array_equal(back.labels, ds.labels) and np.array_equal(back.sample_ids, ds.sample_ids)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0, 5], [0, 1], 3)
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), [0], [0, 1], 3)
