import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepslda.errors import DimensionMismatch, LabelOutOfRange, NoClassesSeen
from deepslda.numerics import ShrinkageConfig, oas_covariance, shrinkage_precision
from deepslda.slda import (
    CovInit,
    Mode,
    SldaModel,
    SnapshotFormatError,
    dumps_model,
    loads_model,
    slda_memory_bytes,
)
from oracles import argmax_low_index, covariance_step, gaussian_discriminant, random_psd


def model_with_means(means, sigma, mode=Mode.FIXED, eps=1e-4):
    means = np.asarray(means, dtype=float)
    m = SldaModel(means.shape[1], means.shape[0], CovInit.zero(), mode, ShrinkageConfig(eps))
    m.sigma = np.asarray(sigma, dtype=float)
    for k, mu in enumerate(means):
        m.learn(mu, k)
    return m


# -- init ----------------------------------------------------------------------


def test_init_zero():
    m = SldaModel(2, 3, CovInit.zero())
    np.testing.assert_array_equal(m.sigma, np.zeros((2, 2)))
    assert m.t == 0
    np.testing.assert_array_equal(m.counts, [0, 0, 0])
    np.testing.assert_array_equal(m.means, np.zeros((3, 2)))


def test_init_ones_matrix():
    m = SldaModel(3, 2, CovInit.ones())
    np.testing.assert_array_equal(m.sigma, np.ones((3, 3)))
    assert m.t == 0


def test_init_from_bank_is_oas_and_sets_t():
    x = np.random.default_rng(0).standard_normal((50, 4))
    m = SldaModel(4, 3, CovInit.from_bank(x))
    np.testing.assert_array_equal(m.sigma, oas_covariance(x))
    assert m.t == 50


def test_init_from_bank_wrong_dim():
    with pytest.raises(DimensionMismatch):
        SldaModel(3, 2, CovInit.from_bank(np.ones((5, 4))))


# -- base fit ----------------------------------------------------------------


def test_base_fit_empty_is_noop():
    m = SldaModel(2, 2)
    before = m.state_digest()
    m.base_fit(np.empty((0, 2)), np.empty(0, dtype=int))
    assert m.state_digest() == before


def test_base_fit_batch_mean():
    m = SldaModel(2, 2, CovInit.zero(), Mode.FIXED)
    m.base_fit([[1.0, 1.0], [3.0, 3.0]], [0, 0])
    np.testing.assert_array_equal(m.means[0], [2.0, 2.0])
    assert m.counts[0] == 2


def test_base_fit_counts_and_seen():
    m = SldaModel(2, 3)
    m.base_fit([[1.0, 0.0], [0.0, 1.0]], [0, 1])
    assert m.seen_classes == {0, 1}
    np.testing.assert_array_equal(m.counts, [1, 1, 0])


def test_base_fit_from_bank_leaves_oas_covariance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 3))
    y = rng.integers(0, 2, 20)
    m = SldaModel(3, 2, CovInit.from_bank(x), Mode.PLASTIC)
    sigma0 = m.sigma.copy()
    m.base_fit(x, y)
    np.testing.assert_array_equal(m.sigma, sigma0)
    assert m.t == 20
    for k in range(2):
        np.testing.assert_allclose(m.means[k], x[y == k].mean(axis=0), rtol=1e-12)


def test_base_fit_without_bank_equals_learning_in_order():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((15, 3))
    y = rng.integers(0, 3, 15)
    a = SldaModel(3, 3, CovInit.ones(), Mode.PLASTIC).base_fit(x, y)
    b = SldaModel(3, 3, CovInit.ones(), Mode.PLASTIC)
    for zi, yi in zip(x, y):
        b.learn(zi, yi)
    assert a.state_digest() == b.state_digest()


def test_base_fit_label_out_of_range():
    with pytest.raises(LabelOutOfRange):
        SldaModel(2, 2).base_fit([[0.0, 0.0]], [2])


# -- learn -------------------------------------------------------------------


def test_learn_fixed_mean_update():
    m = SldaModel(2, 1, CovInit.zero(), Mode.FIXED)
    m.base_fit([[0.0, 0.0], [2.0, 2.0]], [0, 0])  # mean (1, 1), count 2
    sigma0 = m.sigma.copy()
    m.learn([4.0, 4.0], 0)
    np.testing.assert_array_equal(m.means[0], [2.0, 2.0])  # batch mean of {0, 2, 4}
    assert m.counts[0] == 3
    assert m.sigma.tobytes() == sigma0.tobytes()


def test_learn_plastic_worked_example():
    m = SldaModel(2, 1, CovInit.zero(), Mode.PLASTIC)
    m.sigma = np.eye(2)
    m.t = 1
    m.learn([2.0, 0.0], 0)
    np.testing.assert_array_equal(m.sigma, [[1.5, 0.0], [0.0, 0.5]])
    assert m.t == 2
    np.testing.assert_array_equal(m.means[0], [2.0, 0.0])
    assert m.counts[0] == 1
    expected, t = covariance_step(np.eye(2), 1, [2.0, 0.0], [0.0, 0.0])
    np.testing.assert_array_equal(m.sigma, expected)


def test_learn_plastic_t0_discards_seed():
    m = SldaModel(3, 2, CovInit.ones(), Mode.PLASTIC)
    m.learn([5.0, -1.0, 2.0], 1)
    np.testing.assert_array_equal(m.sigma, np.zeros((3, 3)))
    assert m.t == 1


def test_learn_errors():
    m = SldaModel(2, 2)
    with pytest.raises(LabelOutOfRange):
        m.learn([0.0, 0.0], 5)
    with pytest.raises(LabelOutOfRange):
        m.learn([0.0, 0.0], -1)
    with pytest.raises(DimensionMismatch):
        m.learn([0.0, 0.0, 0.0], 0)


def test_fixed_mode_sigma_is_immutable():
    rng = np.random.default_rng(3)
    m = SldaModel(4, 3, CovInit.from_bank(rng.standard_normal((10, 4))), Mode.FIXED)
    before = m.sigma.tobytes()
    for _ in range(200):
        m.learn(rng.standard_normal(4), rng.integers(0, 3))
        if rng.random() < 0.1:
            m.predict(rng.standard_normal(4))
    assert m.sigma.tobytes() == before


@settings(max_examples=50, deadline=None)
@given(
    d=st.integers(1, 8),
    k=st.integers(1, 5),
    n=st.integers(1, 120),
    seed=st.integers(0, 2**32 - 1),
    mode=st.sampled_from(list(Mode)),
)
def test_means_equal_batch_means_and_permutation_invariant(d, k, n, seed, mode):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d)) * 10 + rng.standard_normal(d) * 100
    y = rng.integers(0, k, n)
    m = SldaModel(d, k, CovInit.zero(), mode)
    for zi, yi in zip(x, y):
        m.learn(zi, yi)
    perm = rng.permutation(n)
    p = SldaModel(d, k, CovInit.zero(), mode)
    for zi, yi in zip(x[perm], y[perm]):
        p.learn(zi, yi)
    for c in range(k):
        assert m.counts[c] == np.sum(y == c)
        if m.counts[c]:
            ref = x[y == c].mean(axis=0)
            assert np.max(np.abs(m.means[c] - ref)) <= 1e-9 * np.max(np.abs(ref))
            assert np.max(np.abs(p.means[c] - ref)) <= 1e-9 * np.max(np.abs(ref))


@settings(max_examples=100, deadline=None)
@given(d=st.integers(1, 6), t=st.integers(0, 50), seed=st.integers(0, 2**32 - 1))
def test_plastic_step_matches_oracle(d, t, seed):
    rng = np.random.default_rng(seed)
    m = SldaModel(d, 2, CovInit.zero(), Mode.PLASTIC)
    m.sigma = random_psd(rng, d)
    m.t = t
    m.means[1] = rng.standard_normal(d)
    m.counts[1] = rng.integers(0, 5)
    z = rng.standard_normal(d)
    expected, t1 = covariance_step(m.sigma.copy(), t, z, m.means[1].copy())
    m.learn(z, 1)
    assert m.t == t1
    assert np.max(np.abs(m.sigma - expected)) <= 1e-12


# -- readout and prediction --------------------------------------------------------


def test_refresh_worked_example():
    m = model_with_means([[0.0, 0.0], [2.0, 0.0]], np.eye(2))
    r = m.refresh_readout()
    np.testing.assert_allclose(r.weights, [[0.0, 0.0], [2.0, 0.0]], atol=1e-3)
    np.testing.assert_allclose(r.bias, [0.0, -2.0], atol=1e-3)


def test_refresh_rows_are_precision_times_means():
    rng = np.random.default_rng(4)
    m = model_with_means(rng.standard_normal((4, 3)), random_psd(rng, 3))
    m.counts[2] = 0  # treat class 2 as unseen
    r = m.refresh_readout()
    lam = shrinkage_precision(m.sigma, m.shrinkage)
    for k in (0, 1, 3):
        np.testing.assert_allclose(r.weights[k], lam @ m.means[k], rtol=1e-12)
        np.testing.assert_allclose(r.bias[k], -0.5 * m.means[k] @ lam @ m.means[k], rtol=1e-12)
    assert r.bias[2] == -np.inf


@pytest.mark.parametrize(
    "z, scores, label",
    [([0.5, 0.0], (0.0, -1.0), 0), ([1.5, 0.0], (0.0, 1.0), 1), ([1.0, 0.0], (0.0, 0.0), 0)],
)
def test_predict_worked_examples(z, scores, label):
    m = model_with_means([[0.0, 0.0], [2.0, 0.0]], np.eye(2))
    ranked = m.predict(np.array(z), top_k=2)
    assert ranked[0][0] == label
    got = dict(ranked)
    np.testing.assert_allclose([got[0], got[1]], scores, atol=1e-3)
    oracle = gaussian_discriminant(m.means, [True, True], np.eye(2), 1e-4, np.array(z))
    assert argmax_low_index(oracle) == label


def test_predict_single_class():
    m = model_with_means([[5.0, 5.0]], np.eye(2))
    out = m.predict(np.array([-100.0, 3.0]), top_k=3)
    assert [c for c, _ in out] == [0]


def test_predict_excludes_unseen_and_clips_top_k():
    m = SldaModel(2, 4, CovInit.zero(), Mode.FIXED)
    m.sigma = np.eye(2)
    m.learn([1.0, 0.0], 1)
    m.learn([0.0, 1.0], 3)
    out = m.predict(np.array([1.0, 0.0]), top_k=4)
    assert [c for c, _ in out] == [1, 3]


def test_predict_before_learning():
    with pytest.raises(NoClassesSeen):
        SldaModel(2, 2).predict(np.zeros(2))


def test_refresh_twice_identical():
    rng = np.random.default_rng(6)
    m = model_with_means(rng.standard_normal((3, 4)), random_psd(rng, 4), Mode.PLASTIC)
    a = m.refresh_readout()
    b = m.refresh_readout()
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias.tobytes() == b.bias.tobytes()


def test_auto_refresh_tracks_learned_count():
    rng = np.random.default_rng(7)
    m = SldaModel(3, 2, CovInit.zero(), Mode.PLASTIC)
    for i in range(10):
        m.learn(rng.standard_normal(3), i % 2)
        assert m.readout_is_stale
        snap = m.snapshot()
        assert snap.built_at == i + 1 == m.total_learned


def test_fixed_mode_precision_cached():
    m = model_with_means([[0.0, 1.0], [1.0, 0.0]], np.eye(2))
    lam = m.precision()
    m.learn([3.0, 3.0], 0)
    assert m.precision() is lam


def test_snapshot_is_frozen_and_independent():
    m = model_with_means([[0.0, 0.0], [2.0, 0.0]], np.eye(2), Mode.PLASTIC)
    snap = m.snapshot()
    with pytest.raises(ValueError):
        snap.weights[0, 0] = 1.0
    m.learn([10.0, 10.0], 0)
    assert snap.predict(np.array([0.5, 0.0]))[0][0] == 0


@settings(max_examples=200, deadline=None)
@given(
    d=st.integers(1, 10),
    k=st.integers(1, 8),
    eps=st.sampled_from([1e-4, 1e-2, 0.5]),
    seed=st.integers(0, 2**32 - 1),
)
def test_decision_equivalence_with_gaussian_oracle(d, k, eps, seed):
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((k, d)) * 3
    m = model_with_means(means, random_psd(rng, d), Mode.FIXED, eps)
    z = rng.standard_normal(d) * 3
    oracle = gaussian_discriminant(m.means, m.counts > 0, m.sigma, eps, z)
    top = m.predict(z)[0][0]
    best = max(oracle)
    ties = [c for c, s in enumerate(oracle) if s >= best - 1e-9 * max(1.0, abs(best))]
    if len(ties) == 1:
        assert top == argmax_low_index(oracle)
    else:
        assert top in ties


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(list(Mode)))
def test_prefix_determinism_with_interleaved_predictions(seed, mode):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((60, 4))
    y = rng.integers(0, 3, 60)
    seed_x = rng.standard_normal((10, 4))
    a = SldaModel(4, 3, CovInit.from_bank(seed_x), mode)
    b = SldaModel(4, 3, CovInit.from_bank(seed_x), mode)
    for i, (zi, yi) in enumerate(zip(x, y)):
        a.learn(zi, yi)
        b.learn(zi, yi)
        if rng.random() < 0.3:
            b.predict(rng.standard_normal(4))
        if rng.random() < 0.2:
            b.refresh_readout()
    assert a.state_digest() == b.state_digest()


# -- memory and persistence ----------------------------------------------------------


@pytest.mark.parametrize(
    "k, d, expected", [(1000, 512, 3_100_576), (1, 1, 12), (10, 512, 1_069_096)]
)
def test_memory_bytes(k, d, expected):
    assert slda_memory_bytes(k, d) == expected
    assert SldaModel(d, k).memory_bytes() == expected


def test_memory_1000_classes_512d():
    # 512-d features, 1000 classes: about 0.003 GB
    assert round(slda_memory_bytes(1000, 512) / 1e9, 3) == 0.003


def test_snapshot_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    m = SldaModel(5, 4, CovInit.from_bank(rng.standard_normal((12, 5))), Mode.PLASTIC,
                  ShrinkageConfig(1e-3))
    for _ in range(30):
        m.learn(rng.standard_normal(5), rng.integers(0, 3))
    path = tmp_path / "model.slda"
    m.save(path)
    back = SldaModel.load(path)
    assert back.state_digest() == m.state_digest()
    assert back.means.tobytes() == m.means.tobytes()
    assert back.sigma.tobytes() == m.sigma.tobytes()
    assert back.counts.tobytes() == m.counts.tobytes()
    assert (back.t, back.mode, back.shrinkage, back.cov_init_kind) == (m.t, m.mode, m.shrinkage, m.cov_init_kind)
    assert dumps_model(back) == path.read_bytes()
    z = rng.standard_normal(5)
    assert back.predict(z, 3) == m.predict(z, 3)


def test_snapshot_file_corruption():
    data = dumps_model(SldaModel(2, 2))
    with pytest.raises(SnapshotFormatError):
        loads_model(b"XXXX" + data[4:])
    with pytest.raises(SnapshotFormatError):
        loads_model(data[:-3])
