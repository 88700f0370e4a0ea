import json

import numpy as np
import pytest
from scipy.stats import chisquare

from qpolar import channel as ch
from qpolar import code as cd
from qpolar import polarize as pz
from qpolar import rng
from qpolar import sim

FIG1 = (0.5, 0.4, 0.1)


@pytest.fixture(scope="module")
def fig1_n6():
    W = ch.build_ordered_erasure(2, FIG1)
    t = pz.synthesize_all(W, 6)
    return W, t, cd.construct_by_threshold(t, 0.01)


def test_deterministic_channel_sampling():
    I = ch.identity_channel(2)
    s = sim.Sampler(I)
    x = np.array([0, 1, 2, 3, 3, 2])
    assert np.array_equal(s.sample(x, np.random.default_rng(0).random(6)), x)


def test_sampling_frequencies():
    W = ch.build_ordered_erasure(2, FIG1)
    x = np.full(10**6, 3)
    y = sim.Sampler(W).sample(x, rng.stream(1, 0, rng.CHANNEL).random(x.size))
    counts = np.bincount(y, minlength=W.num_outputs)
    p = W.transition[:, 3]
    assert np.all(counts[p == 0] == 0)
    nz = p > 0
    sigma = np.sqrt(x.size * p[nz] * (1 - p[nz]))
    assert np.all(np.abs(counts[nz] - x.size * p[nz]) < 4 * sigma)
    assert chisquare(counts[nz], x.size * p[nz]).pvalue > 1e-4


def test_rng_streams_reproducible():
    a = rng.stream(7, 3, rng.TRIAL).random(5)
    b = rng.stream(7, 3, rng.TRIAL).random(5)
    c = rng.stream(7, 4, rng.TRIAL).random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    W = ch.build_ordered_erasure(2, FIG1)
    assert sim.sample_output(W, 2, rng.stream(1)) == sim.sample_output(W, 2, rng.stream(1))


def test_wilson_interval():
    lo, hi = sim.wilson_interval(0, 100)
    assert lo == 0 and 0.03 < hi < 0.04
    lo, hi = sim.wilson_interval(50, 100)
    assert lo < 0.5 < hi


def test_noiseless_fer_zero():
    I = ch.identity_channel(2)
    t = pz.synthesize_all(I, 5)
    c = cd.construct_by_threshold(t, 0.1)
    rep = sim.simulate_fer(I, c, 300, seed=1, table=t)
    assert rep.frame_errors == 0 and rep.fer == 0 and rep.union_bound == 0


def test_union_bound_examples(fig1_n6):
    W, t, c = fig1_n6
    frozen_all = cd.CodeConstruction(t.n, t.r, (2,) * t.N, (0,) * t.N, t.fingerprint)
    assert sim.union_bound(frozen_all, t) == 0
    terms = sim.union_bound_terms(c, t)
    assert np.all(terms >= 0) and terms[np.array(c.k) == 2].sum() == 0
    bounds = []
    for n in (6, 8, 10):
        tn = pz.synthesize_all(W, n)
        bounds.append(sim.union_bound(cd.construct_by_threshold(tn, 0.01), tn))
    assert bounds[1] < 1
    other = pz.synthesize_all(ch.identity_channel(2), 6)
    with pytest.raises(ValueError):
        sim.union_bound(c, other)


def test_union_bound_matches_manual_sum(fig1_n6):
    _, t, c = fig1_n6
    zv = t.z_v()
    manual = 0.0
    for j, kj in enumerate(c.k):
        for v in range(1, 4):
            if kj < 2 and (v >> (2 - kj)) == 0:
                manual += zv[j, v - 1]
    assert sim.union_bound(c, t) == pytest.approx(manual, abs=1e-15)


def test_reproducible_and_worker_independent(fig1_n6):
    W, t, c = fig1_n6
    a = sim.simulate_fer(W, c, 700, seed=3, table=t, batch_size=64, workers=1)
    b = sim.simulate_fer(W, c, 700, seed=3, table=t, batch_size=128, workers=4)
    assert a.to_json(include_time=False) == b.to_json(include_time=False)
    assert a.csv_row(include_time=False) == b.csv_row(include_time=False)


def test_early_stop_is_exact(fig1_n6):
    W, t, _ = fig1_n6
    c = cd.construct_by_rate(t, int(1.3 * t.N))
    full = sim.simulate_fer(W, c, 2000, seed=5, table=t, genie=True)
    assert full.frame_errors >= 5
    stop = sim.simulate_fer(W, c, 2000, seed=5, table=t, max_frame_errors=5, batch_size=50, workers=3)
    assert stop.frame_errors == 5 and stop.trials < 2000
    ref = sim.simulate_fer(W, c, stop.trials, seed=5, table=t)
    assert ref.frame_errors == 5
    assert json.loads(stop.to_json())["stop_rule"].startswith("stop at 5")


def test_genie_records(fig1_n6):
    W, t, c = fig1_n6
    rep = sim.simulate_fer(W, c, 500, seed=2, table=t, genie=True)
    assert len(rep.per_index_errors) == t.N
    assert sum(rep.first_error_counts) == rep.frame_errors
    assert all(e == 0 for e, k in zip(rep.per_index_errors, c.k) if k == 2)


def test_fer_falls_with_block_length():
    W = ch.build_ordered_erasure(2, FIG1)
    fers = []
    for n in (4, 8):
        t = pz.synthesize_all(W, n)
        c = cd.construct_by_rate(t, int(0.75 * 1.4 * t.N))
        fers.append(sim.simulate_fer(W, c, 2000, seed=9, table=t).fer)
    assert fers[1] < fers[0]


def test_simulate_rejects_bad_input(fig1_n6):
    W, t, c = fig1_n6
    with pytest.raises(ValueError):
        sim.simulate_fer(W, c, 0, seed=1)


def test_rate_curve_perfect_channel():
    rows = sim.polarization_rate_curve(ch.identity_channel(2), [2, 4], 0.45, 20, seed=0)
    assert [r.fraction for r in rows] == [1.0, 1.0]
    text = sim.rate_curve_csv(rows, comment="c")
    assert text.splitlines()[1].startswith("n,paths,hits")


def test_rate_curve_converse_direction():
    W = ch.build_ordered_erasure(2, FIG1)
    slow = sim.polarization_rate_curve(W, [8], 0.45, 200, seed=4)[0]
    fast = sim.polarization_rate_curve(W, [8], 0.6, 200, seed=4)[0]
    assert fast.hits <= slow.hits
