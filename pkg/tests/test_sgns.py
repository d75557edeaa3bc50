import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgedne.sgns import (LearnerState, NoiseDistribution, PairBatch, TrainConfig, build_noise_distribution,
                         draw_negatives, extract_pairs, init_incremental, init_offline, objective_value,
                         pair_gradients, sgd_train)


def brute_pairs(seq, s):
    out = []
    for p in range(len(seq)):
        for o in range(len(seq)):
            if o != p and abs(o - p) <= s:
                out.append((seq[p], seq[o]))
    return out


def per_pair_objective(zc, zp, zn):
    def ls(x):
        return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))
    val = ls(float(np.dot(zc, zp)))
    for row in zn:
        val += ls(-float(np.dot(zc, row)))
    return val


def naive_objective(state, batch, negatives):
    total = 0.0
    for k, (c, i) in enumerate(zip(batch.centers, batch.contexts)):
        total += per_pair_objective(state.in_embed[c], state.out_embed[i], state.out_embed[negatives[k]])
    return total


def random_state(n, d, rng, scale=0.5):
    st_ = init_offline(np.arange(n), d, rng)
    st_.in_embed[:] = rng.normal(0, scale, size=(n, d))
    st_.out_embed[:] = rng.normal(0, scale, size=(n, d))
    return st_


def fd_rel_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)


def finite_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2 * h)
    return g


# ---- pairs

def test_pairs_window_one():
    b = extract_pairs([[0, 1, 2]], 1)
    assert sorted(b.pairs) == sorted([(0, 1), (1, 0), (1, 2), (2, 1)])


def test_pairs_window_two():
    b = extract_pairs([[0, 1, 2]], 2)
    assert sorted(b.pairs) == sorted([(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=40), st.integers(1, 12))
def test_pairs_match_brute_force(seq, s):
    b = extract_pairs([seq], s)
    assert b.pairs == brute_pairs(seq, s)


def test_pairs_ignore_padding():
    b = extract_pairs(np.array([[3, 4, -1, -1]]), 5)
    assert b.pairs == [(3, 4), (4, 3)]


# ---- noise

def test_noise_alpha_one():
    b = PairBatch(np.zeros(4, dtype=np.int64), np.array([0, 0, 0, 1]))
    assert np.allclose(build_noise_distribution(b, 1.0).probs, [0.75, 0.25])


def test_noise_alpha_three_quarters():
    b = PairBatch(np.zeros(4, dtype=np.int64), np.array([0, 0, 0, 1]))
    z = 3 ** 0.75 + 1
    assert np.allclose(build_noise_distribution(b, 0.75).probs, [3 ** 0.75 / z, 1 / z], rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=200), st.floats(0.0, 2.0))
def test_noise_normalised_on_support(contexts, alpha):
    ctx = np.array(contexts)
    nd = build_noise_distribution(PairBatch(np.zeros_like(ctx), ctx), alpha, size=25)
    assert math.isclose(nd.probs.sum(), 1.0, rel_tol=1e-12)
    assert set(nd.support.tolist()) == set(contexts)
    assert np.all(nd.probs[np.setdiff1d(np.arange(25), ctx)] == 0)


@pytest.mark.parametrize("alpha", [0.0, 0.75, 1.0, 2.0])
def test_noise_uniform_counts(alpha):
    b = PairBatch(np.zeros(6, dtype=np.int64), np.array([0, 1, 2, 0, 1, 2]))
    assert np.allclose(build_noise_distribution(b, alpha).probs, [1 / 3] * 3)


def test_noise_sampling_frequencies():
    rng = np.random.default_rng(0)
    ctx = rng.integers(0, 10, size=500)
    nd = build_noise_distribution(PairBatch(np.zeros_like(ctx), ctx), 0.75)
    # a single pair with many negatives exercises the kernel's alias draws; the positive row is unused
    n = len(nd.probs)
    st_ = init_offline(np.arange(n), 4, rng)
    before = st_.out_embed.copy()
    st_.in_embed[:] = 1.0
    sgd_train(st_, PairBatch(np.array([0]), np.array([0])), nd,
              TrainConfig(negatives=200_000, learning_rate=1e-9, lr_decay=False), 3)
    # each negative draw subtracts lr*sigmoid(~0)*1 per dim; counts are proportional to the shift
    shift = -(st_.out_embed - before)[:, 0]
    shift[0] += 0.5e-9  # the positive pair moved row 0 by +lr*0.5
    freq = shift / shift.sum()
    assert np.allclose(freq, nd.probs, atol=0.01)


# ---- objective

def test_objective_all_zero():
    rng = np.random.default_rng(0)
    st_ = init_offline(np.arange(5), 3, rng)
    st_.in_embed[:] = 0
    b = PairBatch(np.array([0, 1, 2]), np.array([1, 2, 3]))
    negs = rng.integers(0, 5, size=(3, 4))
    assert math.isclose(objective_value(st_, b, negs), 3 * 5 * math.log(0.5), rel_tol=1e-14)


def test_objective_order_invariant_and_naive_match():
    rng = np.random.default_rng(1)
    st_ = random_state(12, 6, rng)
    b = PairBatch(rng.integers(0, 12, 40), rng.integers(0, 12, 40))
    negs = rng.integers(0, 12, size=(40, 5))
    v = objective_value(st_, b, negs)
    perm = rng.permutation(40)
    assert math.isclose(v, objective_value(st_, PairBatch(b.centers[perm], b.contexts[perm]), negs[perm]),
                        rel_tol=1e-12)
    assert abs(v - naive_objective(st_, b, negs)) <= 1e-12 * max(1.0, abs(v))


def test_objective_finite_for_large_scores():
    st_ = init_offline(np.arange(2), 1, np.random.default_rng(0))
    st_.in_embed[:] = [[50.0], [-50.0]]
    st_.out_embed[:] = [[1.0], [1.0]]
    b = PairBatch(np.array([0, 1]), np.array([1, 0]))
    assert np.isfinite(objective_value(st_, b, np.array([[0], [1]])))


# ---- gradients

@pytest.mark.parametrize("q", [0, 1, 5])
def test_pair_gradients_finite_difference(q):
    rng = np.random.default_rng(q)
    for _ in range(20):
        d = int(rng.integers(1, 9))
        zc, zp = rng.normal(0, 0.7, d), rng.normal(0, 0.7, d)
        zn = rng.normal(0, 0.7, (q, d))
        gc, gp, gn = pair_gradients(zc, zp, zn)
        assert fd_rel_error(gc, finite_difference(lambda x: per_pair_objective(x, zp, zn), zc)) < 1e-4
        assert fd_rel_error(gp, finite_difference(lambda x: per_pair_objective(zc, x, zn), zp)) < 1e-4
        for k in range(q):
            def f(x, k=k):
                z = zn.copy()
                z[k] = x
                return per_pair_objective(zc, zp, z)
            assert fd_rel_error(gn[k], finite_difference(f, zn[k])) < 1e-4


def test_kernel_step_equals_analytic_gradient():
    rng = np.random.default_rng(5)
    st_ = random_state(6, 5, rng)
    before = st_.copy()
    c, i, j = 0, 1, 4
    # single-row noise support makes the negative draw deterministic
    noise = build_noise_distribution(PairBatch(np.array([0]), np.array([j])), 0.75, size=6)
    lr = 1e-3
    sgd_train(st_, PairBatch(np.array([c]), np.array([i])), noise,
              TrainConfig(negatives=1, learning_rate=lr, lr_decay=False), 0)
    gc, gp, gn = pair_gradients(before.in_embed[c], before.out_embed[i], before.out_embed[[j]])
    assert np.allclose(st_.in_embed[c] - before.in_embed[c], lr * gc, rtol=1e-10, atol=1e-15)
    assert np.allclose(st_.out_embed[i] - before.out_embed[i], lr * gp, rtol=1e-10, atol=1e-15)
    assert np.allclose(st_.out_embed[j] - before.out_embed[j], lr * gn[0], rtol=1e-10, atol=1e-15)


def test_single_pair_ascent():
    rng = np.random.default_rng(2)
    st_ = random_state(3, 4, rng)
    c, i = 0, 1
    before = float(st_.in_embed[c] @ st_.out_embed[i])
    noise = build_noise_distribution(PairBatch(np.array([c]), np.array([i])), 0.75)
    sgd_train(st_, PairBatch(np.array([c]), np.array([i])), noise, TrainConfig(negatives=0, learning_rate=0.01), 0)
    assert float(st_.in_embed[c] @ st_.out_embed[i]) > before


def test_non_finite_gradient_aborts():
    st_ = init_offline(np.arange(2), 2, np.random.default_rng(0))
    st_.in_embed[0] = [np.inf, -np.inf]
    st_.out_embed[1] = [1.0, 1.0]
    noise = build_noise_distribution(PairBatch(np.array([0]), np.array([1])), 0.75)
    with pytest.raises(FloatingPointError, match="pair 0"):
        sgd_train(st_, PairBatch(np.array([0]), np.array([1])), noise, TrainConfig(negatives=0), 0)


def test_rejects_out_of_vocab_rows():
    st_ = init_offline(np.arange(3), 2, np.random.default_rng(0))
    b = PairBatch(np.array([0]), np.array([5]))
    with pytest.raises(IndexError):
        sgd_train(st_, b, build_noise_distribution(b, 0.75), TrainConfig(), 0)


# ---- training behaviour

def _corpus(rng, n=20):
    walks = np.array([np.roll(np.arange(n), -k)[:12] for k in range(n)] * 3)
    return extract_pairs(walks, 3)


def test_training_improves_objective():
    rng = np.random.default_rng(3)
    batch = _corpus(rng)
    noise = build_noise_distribution(batch, 0.75)
    negs = draw_negatives(noise, len(batch), 5, np.random.default_rng(9))
    st_ = init_offline(np.arange(20), 8, rng)
    v0 = objective_value(st_, batch, negs)
    sgd_train(st_, batch, noise, TrainConfig(window=3, epochs=10), 4)
    assert objective_value(st_, batch, negs) > v0


def test_epoch_over_epoch_improvement_on_average():
    vals = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        batch = _corpus(rng)
        noise = build_noise_distribution(batch, 0.75)
        negs = draw_negatives(noise, len(batch), 5, np.random.default_rng(100 + seed))
        st_ = init_offline(np.arange(20), 8, rng)
        row = [objective_value(st_, batch, negs)]
        for ep in range(4):
            sgd_train(st_, batch, noise, TrainConfig(window=3, learning_rate=0.025, lr_decay=False), ep)
            row.append(objective_value(st_, batch, negs))
        vals.append(row)
    mean = np.mean(vals, axis=0)
    assert np.all(np.diff(mean) > 0)


def test_untouched_rows_bit_identical():
    rng = np.random.default_rng(6)
    st_ = random_state(30, 6, rng)
    before = st_.copy()
    walks = rng.integers(0, 15, size=(10, 20))  # rows 15..29 never appear
    batch = extract_pairs(walks, 4)
    sgd_train(st_, batch, build_noise_distribution(batch, 0.75, size=30), TrainConfig(), 1)
    assert np.array_equal(st_.in_embed[15:], before.in_embed[15:])
    assert np.array_equal(st_.out_embed[15:], before.out_embed[15:])
    assert not np.array_equal(st_.in_embed[:15], before.in_embed[:15])


def test_training_deterministic():
    rng = np.random.default_rng(0)
    batch = _corpus(rng)
    noise = build_noise_distribution(batch, 0.75)
    a = init_offline(np.arange(20), 8, np.random.default_rng(1))
    b = a.copy()
    sgd_train(a, batch, noise, TrainConfig(), np.random.default_rng(5))
    sgd_train(b, batch, noise, TrainConfig(), np.random.default_rng(5))
    assert np.array_equal(a.in_embed, b.in_embed) and np.array_equal(a.out_embed, b.out_embed)


# ---- initialisation

def test_init_offline():
    a = init_offline([5, 2, 9], 16, np.random.default_rng(0))
    b = init_offline([5, 2, 9], 16, np.random.default_rng(0))
    assert a.in_embed.shape == a.out_embed.shape == (3, 16)
    assert np.array_equal(a.in_embed, b.in_embed)
    assert np.all(np.abs(a.in_embed) <= 0.5 / 16)
    assert np.all(a.out_embed == 0)
    assert a.rows([2, 5, 9, 3]).tolist() == [0, 1, 2, -1]


def test_init_incremental():
    prev = init_offline([0, 1], 4, np.random.default_rng(0))
    same = init_incremental(prev, [], np.random.default_rng(1))
    assert np.array_equal(same.in_embed, prev.in_embed) and np.array_equal(same.nodes, prev.nodes)
    grown = init_incremental(prev, [7], np.random.default_rng(1))
    assert len(grown) == 3
    assert np.array_equal(grown.in_embed[:2], prev.in_embed)
    assert np.array_equal(grown.out_embed[:2], prev.out_embed)
    assert grown.rows([7]).tolist() == [2]
    assert np.all(np.abs(grown.in_embed[2]) <= 0.5 / 4) and np.all(grown.out_embed[2] == 0)
    with pytest.raises(ValueError):
        init_incremental(prev, [1, 8], np.random.default_rng(1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(window=0)
    with pytest.raises(ValueError):
        TrainConfig(negatives=-1)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
