import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpolar import channel as ch
from qpolar import polarize as pz

import oracles

FIG1 = (0.5, 0.4, 0.1)


def quaternary():
    return ch.quaternary_stable_channel()


# ---------------------------------------------------------------- ordered weight

@pytest.mark.parametrize("v,r,w", [(0, 3, 0), (2, 2, 1), (1, 2, 2), (3, 2, 2), (4, 3, 1), (6, 3, 2), (5, 3, 3)])
def test_ordered_weight_examples(v, r, w):
    assert ch.ordered_weight(v, r) == w


@pytest.mark.parametrize("r", [1, 2, 3, 4, 5])
def test_weight_classes_partition(r):
    classes = ch.weight_classes(r)
    assert [len(c) for c in classes] == [2 ** (i - 1) for i in range(1, r + 1)]
    assert sorted(np.concatenate(classes).tolist()) == list(range(1, 2**r))


# ---------------------------------------------------------------- capacity

def test_capacity_examples():
    assert ch.capacity(ch.identity_channel(2)) == pytest.approx(2.0, abs=1e-12)
    for r in (1, 2, 3):
        assert ch.capacity(ch.useless_channel(r)) == pytest.approx(0.0, abs=1e-12)
    assert ch.capacity(quaternary()) == pytest.approx(1.0, abs=1e-12)
    assert ch.capacity(ch.build_ordered_erasure(2, FIG1)) == pytest.approx(1.4, abs=1e-12)


def test_capacity_matches_definition_on_random_channels():
    g = np.random.default_rng(3)
    for _ in range(30):
        W = ch.random_channel(int(g.integers(1, 4)), int(g.integers(2, 9)), g)
        assert ch.capacity(W) == pytest.approx(oracles.capacity_bits(W.transition), abs=1e-12)


# ---------------------------------------------------------------- Bhattacharyya

def test_bhattacharyya_examples():
    I = ch.identity_channel(2)
    assert all(ch.bhattacharyya_pair(I, a, b) == 0 for a in range(4) for b in range(4) if a != b)
    Q = quaternary()
    assert ch.bhattacharyya_pair(Q, 0, 2) == pytest.approx(1.0)
    assert ch.bhattacharyya_pair(Q, 0, 1) == pytest.approx(0.0)
    assert ch.bhattacharyya_pair(Q, 3, 3) == pytest.approx(1.0)
    p = 0.11
    bsc = ch.Dmc(1, ["0", "1"], np.array([[1 - p, p], [p, 1 - p]]))
    assert ch.bhattacharyya_pair(bsc, 0, 1) == pytest.approx(2 * np.sqrt(p * (1 - p)), abs=1e-15)


def test_bhattacharyya_rejects_bad_symbol():
    with pytest.raises(ch.ChannelError):
        ch.bhattacharyya_pair(quaternary(), 0, 4)


def test_stats_examples():
    s = ch.channel_stats(ch.identity_channel(2))
    assert np.allclose(s.z_v, 0) and np.allclose(s.z_level, 0) and s.capacity == pytest.approx(2)
    s = ch.channel_stats(quaternary())
    assert np.allclose(s.z_v, [0, 1, 0]) and np.allclose(s.z_level, [1, 0])
    assert s.capacity == pytest.approx(1)
    s = ch.channel_stats(ch.build_ordered_erasure(2, FIG1))
    assert np.allclose(s.z_level, [0.5, 0.1], atol=1e-12)


def test_stats_against_direct_sums():
    g = np.random.default_rng(11)
    for _ in range(25):
        r = int(g.integers(1, 4))
        W = ch.random_channel(r, int(g.integers(2, 9)), g)
        s = ch.channel_stats(W)
        zv = oracles.z_v_direct(W.transition)
        assert np.allclose(s.z_v, zv, atol=1e-12)
        for i, cls in enumerate(ch.weight_classes(r)):
            assert s.z_level[i] == pytest.approx(zv[cls - 1].mean(), abs=1e-12)
        weights = 2.0 ** np.arange(r)
        assert s.z_avg == pytest.approx(weights @ s.z_level / (2**r - 1), abs=1e-12)


def test_iwzw_bounds_bracket_capacity():
    g = np.random.default_rng(5)
    for _ in range(50):
        W = ch.random_channel(int(g.integers(1, 4)), int(g.integers(2, 9)), g)
        s = ch.channel_stats(W)
        lo, hi = ch.iwzw_bounds(s)
        assert lo - 1e-7 <= s.capacity <= hi + 1e-7


# ---------------------------------------------------------------- restriction

def test_restrict_rightmost_examples():
    W = ch.build_ordered_erasure(2, FIG1)
    assert np.array_equal(ch.restrict_rightmost(W, 0).transition, W.transition)
    R = ch.restrict_rightmost(quaternary(), 1)
    assert R.r == 1 and ch.capacity(R) == pytest.approx(1.0)
    assert np.allclose(R.transition, np.eye(2))
    B = ch.restrict_rightmost(W, 1)
    assert ch.capacity(B) == pytest.approx(0.9, abs=1e-12)
    assert ch.channel_stats(B).z_level[0] == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ch.ChannelError):
        ch.restrict_rightmost(W, 2)


# ---------------------------------------------------------------- merging and quantization

def test_merge_split_output():
    t = np.array([[0.3, 0.1], [0.3, 0.1], [0.4, 0.8]])
    W = ch.Dmc(1, ["a", "b", "c"], t)
    M = ch.merge_equivalent_outputs(W)
    assert M.num_outputs == 2
    assert ch.capacity(M) == pytest.approx(ch.capacity(W), abs=1e-12)


def test_merge_drops_zero_mass_outputs():
    W = ch.Dmc(1, ["a", "b", "c"], np.array([[0.5, 0.5], [0.0, 0.0], [0.5, 0.5]]))
    assert ch.merge_equivalent_outputs(W).num_outputs == 1


def test_minus_of_erasure_channel_shrinks_after_merge():
    W = ch.build_ordered_erasure(2, FIG1)
    raw = oracles.minus_dense(W.transition)
    merged = pz.transform_minus(W)
    assert merged.num_outputs < W.num_outputs**2
    assert ch.capacity(merged) == pytest.approx(oracles.capacity_bits(raw), abs=1e-10)


def test_merge_of_quaternary_plus_keeps_stats():
    Q = quaternary()
    P = pz.transform_plus(Q)
    a, b = ch.channel_stats(P), ch.channel_stats(Q)
    assert np.allclose(a.z_v, b.z_v, atol=1e-12) and a.capacity == pytest.approx(b.capacity, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), r=st.integers(1, 3), m=st.integers(2, 6))
def test_merge_preserves_stats_under_duplication(seed, r, m):
    g = np.random.default_rng(seed)
    W = ch.random_channel(r, m, g)
    # split every output into two proportional parts and shuffle
    w = g.uniform(0.1, 0.9, size=m)
    t = np.vstack([W.transition * w[:, None], W.transition * (1 - w)[:, None]])
    perm = g.permutation(2 * m)
    D = ch.Dmc(r, [f"o{i}" for i in range(2 * m)], t[perm])
    M = ch.merge_equivalent_outputs(D)
    assert M.num_outputs <= m
    a, b = ch.channel_stats(M), ch.channel_stats(W)
    assert a.capacity == pytest.approx(b.capacity, abs=1e-10)
    assert np.allclose(a.z_v, b.z_v, atol=1e-10)


def test_quantize_identity_when_small():
    W = ch.build_ordered_erasure(2, FIG1)
    Q = ch.quantize_outputs(W, 100)
    assert Q.num_outputs == W.num_outputs and not Q.quantized


def test_quantize_merges_closest_pair_first():
    t = np.array([[0.3, 0.3 + 1e-15], [0.3, 0.3 - 1e-15], [0.1, 0.4], [0.3, 0.0]])
    t /= t.sum(axis=0)
    W = ch.Dmc(1, ["a", "b", "c", "d"], t)
    Q = ch.quantize_outputs(W, 3)
    assert Q.num_outputs == 3 and Q.quantized
    assert any("a" in s or "b" in s for s in Q.labels)
    assert ch.capacity(Q) == pytest.approx(ch.capacity(W), abs=1e-9)


def test_quantize_large_alphabet_uses_lattice_then_greedy():
    g = np.random.default_rng(6)
    W = ch.random_channel(2, 9000, g)
    Q = ch.quantize_outputs(W, 100)
    assert Q.num_outputs <= 100 and Q.quantized
    assert np.allclose(Q.transition.sum(axis=0), 1.0)
    assert ch.capacity(Q) <= ch.capacity(W) + 1e-12


def test_quantize_forced_on_random_channel():
    g = np.random.default_rng(2)
    W = ch.random_channel(2, 40, g)
    Q = ch.quantize_outputs(W, 8)
    assert Q.num_outputs == 8 and Q.quantized
    assert np.allclose(Q.transition.sum(axis=0), 1.0)
    # merging never increases capacity
    assert ch.capacity(Q) <= ch.capacity(W) + 1e-12


def test_quantize_rejects_tiny_budget():
    with pytest.raises(ch.ChannelError):
        ch.quantize_outputs(ch.identity_channel(2), 3)


def test_quantized_synthesis_close_to_exact():
    W = ch.build_ordered_erasure(2, FIG1)
    exact = pz.synthesize_all(W, 6)
    approx = pz.synthesize_all(W, 6, max_outputs=4096)
    assert not exact.any_quantized
    assert np.max(np.abs(exact.capacities() - approx.capacities())) < 1e-3


# ---------------------------------------------------------------- builders

def test_ordered_erasure_builder():
    for r in (1, 2, 3):
        e = np.zeros(r + 1)
        e[0] = 1
        assert ch.capacity(ch.build_ordered_erasure(r, e)) == pytest.approx(r)
        e = np.zeros(r + 1)
        e[-1] = 1
        assert ch.capacity(ch.build_ordered_erasure(r, e)) == pytest.approx(0, abs=1e-12)
    W = ch.build_ordered_erasure(2, FIG1)
    assert W.num_outputs == 4 + 2 + 1
    assert ch.capacity_ordered_erasure(2, FIG1) == pytest.approx(1.4)
    assert ch.capacity_ordered_erasure(2, (1, 0, 0)) == pytest.approx(2)
    assert ch.capacity_ordered_erasure(9, [0.1] * 10) == pytest.approx(4.5)


def test_ordered_erasure_matches_closed_form_random():
    g = np.random.default_rng(8)
    for r in (1, 2, 3, 4):
        e = g.dirichlet(np.ones(r + 1))
        W = ch.build_ordered_erasure(r, e)
        assert ch.capacity(W) == pytest.approx(ch.capacity_ordered_erasure(r, e), abs=1e-12)


def test_ordered_erasure_rejects_bad_eps():
    with pytest.raises(ch.ChannelError):
        ch.build_ordered_erasure(2, (0.5, 0.5))
    with pytest.raises(ch.ChannelError):
        ch.build_ordered_erasure(2, (0.5, 0.6, -0.1))
    with pytest.raises(ch.ChannelError):
        ch.build_ordered_erasure(2, (0.5, 0.4, 0.2))


def test_ordered_symmetric_builder():
    assert np.allclose(ch.build_ordered_symmetric(2, (1, 0, 0)).transition, np.eye(4))
    g = np.random.default_rng(1)
    for r in (1, 2, 3, 4):
        W = ch.build_ordered_symmetric(r, g.dirichlet(np.ones(r + 1)))
        assert np.allclose(W.transition.sum(axis=0), 1, atol=1e-12)


def test_ordered_symmetric_closed_form_reported():
    # The first-principles capacity is authoritative; the literal closed form is
    # only reported. Both must at least be finite and within [0, r].
    eps = (0.7, 0.2, 0.1)
    W = ch.build_ordered_symmetric(2, eps)
    direct = ch.capacity(W)
    assert direct == pytest.approx(oracles.capacity_bits(W.transition), abs=1e-12)
    closed = ch.capacity_ordered_symmetric_closed_form(2, eps)
    assert np.isfinite(closed)
    print(f"ordered symmetric r=2 eps={eps}: first-principles {direct:.12f}, closed form {closed:.12f}")


# ---------------------------------------------------------------- validation and I/O

def test_dmc_validation():
    with pytest.raises(ch.ChannelError):
        ch.Dmc(2, ["a"], np.ones((1, 3)))
    with pytest.raises(ch.ChannelError):
        ch.Dmc(1, ["a", "b"], np.array([[0.5, 0.5], [0.4, 0.5]]))
    with pytest.raises(ch.ChannelError):
        ch.Dmc(1, ["a", "a"], np.array([[0.5, 0.5], [0.5, 0.5]]))
    with pytest.raises(ch.ChannelError):
        ch.Dmc(1, ["a", "b"], np.array([[1.5, 0.5], [-0.5, 0.5]]))
    with pytest.raises(ch.ChannelError):
        quaternary().index_of("7")


def test_json_round_trip(tmp_path):
    W = ch.build_ordered_erasure(2, FIG1)
    p = tmp_path / "w.json"
    ch.save(W, p)
    V = ch.load(p)
    assert V.labels == W.labels and np.array_equal(V.transition, W.transition)
    assert ch.fingerprint(V) == ch.fingerprint(W)
    assert json.loads(p.read_text())["r"] == 2


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ch.ChannelError):
        ch.load(p)
    p.write_text(json.dumps({"r": 1, "outputs": ["a"], "matrix": [[0.5], [0.5]]}))
    with pytest.raises(ch.ChannelError):
        ch.load(p)
