"""Channel transforms W-/W+, recursive synthesis of the virtual channels, and
polarization diagnostics.

Transforms work on the posterior form of a channel: output ``y`` carries mass
``m_y = mean_x W(y|x)`` and posterior ``p_y(x) = W(y|x) / (q m_y)``.  Two outputs
are equivalent exactly when their posteriors agree, so merging happens while the
candidate outputs are enumerated instead of after a full ``M**2 q`` expansion.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rng as _rng
from .channel import (
    TINY,
    ChannelStats,
    Dmc,
    channel_stats,
    fingerprint,
    from_posteriors,
    group_keys,
    iwzw_bounds,
    ordered_weight,
    projection_vectors,
    quantize_outputs,
    restricted_capacity,
    weight_classes,
)

DEFAULT_MAX_OUTPUTS = 65536
DEFAULT_MERGE_TOL = 1e-12
MEMORY_BUDGET = 2 * 1024**3
# Candidate sets below this many floats are merged with explicit verification.
_EXPLICIT_LIMIT = 4_000_000


class SynthesisResourceError(RuntimeError):
    """Raised when a transform would exceed the configured memory budget."""


def _posterior_form(W: Dmc):
    t = W.transition
    mass = t.mean(axis=1)
    keep = np.flatnonzero(mass > TINY)
    return keep, mass[keep], t[keep] / (W.q * mass[keep, None])


def _circulant(g: np.ndarray) -> np.ndarray:
    # C[x, u] = g[(x - u) mod q]
    q = len(g)
    x = np.arange(q)
    return g[(x[:, None] - x[None, :]) % q]


def _merge_candidates(keys, mass, post_fn, merge_tol, explicit):
    """Group candidate outputs; returns (representative index, mass, posterior) per group."""
    live = np.flatnonzero(mass > TINY)
    keys, mass = keys[live], mass[live]
    gid = group_keys(keys)
    ngroups = int(gid.max()) + 1 if len(gid) else 0
    if explicit:
        post = post_fn(live)
        first = np.zeros(ngroups, dtype=np.int64)
        seen = np.zeros(ngroups, dtype=bool)
        for i, g in enumerate(gid):
            if not seen[g]:
                seen[g] = True
                first[g] = i
        bad = np.max(np.abs(post - post[first[gid]]), axis=1) > merge_tol
        if np.any(bad):
            # keys collided for posteriors that differ; split them off
            extra = {}
            for i in np.flatnonzero(bad):
                for j in extra.get(gid[i], []):
                    if np.max(np.abs(post[i] - post[j])) <= merge_tol:
                        gid[i] = gid[j]
                        break
                else:
                    extra.setdefault(gid[i], []).append(i)
                    gid[i] = ngroups
                    ngroups += 1
            _, firsts = np.unique(gid, return_index=True)
            rank = np.empty(len(firsts), dtype=np.int64)
            rank[np.argsort(firsts, kind="stable")] = np.arange(len(firsts))
            gid = rank[gid]
        gmass = np.bincount(gid, weights=mass, minlength=ngroups)
        gpost = np.zeros((ngroups, post.shape[1]))
        np.add.at(gpost, gid, mass[:, None] * post)
        gpost /= gmass[:, None]
    else:
        gmass = np.bincount(gid, weights=mass, minlength=ngroups)
        _, firsts = np.unique(gid, return_index=True)
        gpost = post_fn(live[firsts])
    _, firsts = np.unique(gid, return_index=True)
    return live[firsts], gmass, gpost


def _correlate(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    """Rows c(u1) = sum_u2 p1(u1+u2) p2(u2)."""
    q = p1.shape[1]
    doubled = np.concatenate([p1, p1[:, :-1]], axis=1)
    windows = sliding_window_view(doubled, q, axis=1)  # windows[k, u1, u2] = p1[k, u1+u2]
    return np.einsum("kij,kj->ki", windows, p2)


def _check_budget(count: int, what: str) -> None:
    if count * 8 > MEMORY_BUDGET:
        raise SynthesisResourceError(
            f"{what} needs ~{count * 8 / 1024**3:.1f} GiB, above the {MEMORY_BUDGET / 1024**3:.1f} GiB budget"
        )


def transform_minus(W: Dmc, merge_tol: float = DEFAULT_MERGE_TOL) -> Dmc:
    """W-((y1,y2)|u1) = (1/q) sum_u2 W(y1|u1+u2) W(y2|u2), equivalent outputs merged."""
    q = W.q
    keep, m, P = _posterior_form(W)
    M = len(m)
    _check_budget(M * M * 4, "minus transform")
    G = projection_vectors(q)
    keys = np.stack([((P @ _circulant(g)) @ P.T).ravel() for g in G], axis=1)
    mass = np.outer(m, m).ravel()
    y1 = np.repeat(np.arange(M), M)
    y2 = np.tile(np.arange(M), M)

    def post_fn(sel):
        return _correlate(P[y1[sel]], P[y2[sel]])

    explicit = M * M * q <= _EXPLICIT_LIMIT
    reps, gmass, gpost = _merge_candidates(keys, mass, post_fn, merge_tol, explicit)
    labels = [f"({W.labels[keep[y1[i]]]},{W.labels[keep[y2[i]]]})" for i in reps]
    return from_posteriors(W.r, gmass, gpost, labels, W.quantized)


def transform_plus(W: Dmc, merge_tol: float = DEFAULT_MERGE_TOL) -> Dmc:
    """W+((y1,y2,u1)|u2) = (1/q) W(y1|u1+u2) W(y2|u2), equivalent outputs merged."""
    q = W.q
    keep, m, P = _posterior_form(W)
    M = len(m)
    G = projection_vectors(q)
    ar = np.arange(q)
    # distinct shifted posteriors t(u2) = p_y1(u1 + u2) over all (y1, u1)
    _check_budget(M * q * 4, "plus transform")
    skeys = np.stack([(P @ _circulant(g)).ravel() for g in G], axis=1)
    smass = np.repeat(m, q)
    sy1 = np.repeat(np.arange(M), q)
    su1 = np.tile(ar, M)

    def shift_fn(sel):
        return P[sy1[sel]][np.arange(len(sel))[:, None], (su1[sel][:, None] + ar[None, :]) % q]

    explicit = M * q * q <= _EXPLICIT_LIMIT
    sreps, amass, T = _merge_candidates(skeys, smass, shift_fn, merge_tol, explicit)
    A = len(amass)
    _check_budget(A * q + A * M * 6, "plus transform")
    S = T @ P.T
    keys = np.stack([((T * g) @ P.T) / np.where(S > 0, S, 1.0) for g in G], axis=-1).reshape(-1, 2)
    mass = (amass[:, None] * m[None, :] * S).ravel()
    ai = np.repeat(np.arange(A), M)
    y2 = np.tile(np.arange(M), A)

    def post_fn(sel):
        prod = T[ai[sel]] * P[y2[sel]]
        return prod / prod.sum(axis=1, keepdims=True)

    explicit = A * M * q <= _EXPLICIT_LIMIT
    reps, gmass, gpost = _merge_candidates(keys, mass, post_fn, merge_tol, explicit)
    labels = []
    for i in reps:
        s = sreps[ai[i]]
        labels.append(f"({W.labels[keep[sy1[s]]]},{W.labels[keep[y2[i]]]},{su1[s]})")
    return from_posteriors(W.r, gmass, gpost, labels, W.quantized)


def _relabel(W: Dmc) -> Dmc:
    return Dmc(W.r, [str(i) for i in range(W.num_outputs)], W.transition, W.quantized)


def step(W: Dmc, sign: str, max_outputs: int = DEFAULT_MAX_OUTPUTS, merge_tol: float = DEFAULT_MERGE_TOL) -> Dmc:
    if sign == "-":
        V = transform_minus(W, merge_tol)
    elif sign == "+":
        V = transform_plus(W, merge_tol)
    else:
        raise ValueError(f"path sign must be '+' or '-', got {sign!r}")
    V = quantize_outputs(V, max_outputs)
    return _relabel(V)


def synthesize(W: Dmc, path: Iterable[str], max_outputs: int = DEFAULT_MAX_OUTPUTS,
               merge_tol: float = DEFAULT_MERGE_TOL) -> Dmc:
    for s in path:
        W = step(W, s, max_outputs, merge_tol)
    return W


def index_to_path(i: int, n: int) -> str:
    """1-based index -> sign string; the most significant bit of i-1 is the first step."""
    if not 1 <= i <= 2**n:
        raise ValueError(f"index {i} out of range for n={n}")
    return "".join("+" if b == "1" else "-" for b in format(i - 1, f"0{n}b")) if n else ""


def path_to_index(path: str) -> int:
    bits = "".join("1" if s == "+" else "0" for s in path)
    return (int(bits, 2) if bits else 0) + 1


def code_fingerprint(W: Dmc, n: int) -> str:
    """Binds a construction (or table) to its channel and block length."""
    import hashlib

    return hashlib.sha256(f"{fingerprint(W)}|n={n}".encode()).hexdigest()[:16]


# ---------------------------------------------------------------- synthesis table


@dataclass
class IndexRecord:
    index: int
    path: str
    stats: ChannelStats
    quantized: bool
    lsb_capacity: np.ndarray  # capacity restricted to the k least significant bits, k=0..r
    num_outputs: int


@dataclass
class SynthesisTable:
    n: int
    r: int
    max_outputs: int
    merge_tol: float
    fingerprint: str
    records: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return 2**self.n

    @property
    def q(self) -> int:
        return 2**self.r

    def capacities(self) -> np.ndarray:
        return np.array([rec.stats.capacity for rec in self.records])

    def z_levels(self) -> np.ndarray:
        return np.array([rec.stats.z_level for rec in self.records])

    def z_v(self) -> np.ndarray:
        return np.array([rec.stats.z_v for rec in self.records])

    @property
    def any_quantized(self) -> bool:
        return any(rec.quantized for rec in self.records)

    def to_csv(self, epsilon: float = 0.1, comment: Optional[str] = None) -> str:
        buf = io.StringIO()
        if comment is not None:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "path", "capacity"] + [f"z{i}" for i in range(1, self.r + 1)]
                   + ["class_k", "quantized"])
        for rec in self.records:
            cls = classify(rec.stats, epsilon)
            w.writerow([rec.index, rec.path or "", repr(float(rec.stats.capacity))]
                       + [repr(float(z)) for z in rec.stats.z_level]
                       + ["U" if cls.k is None else cls.k, int(rec.quantized)])
        return buf.getvalue()


def _record(index: int, path: str, V: Dmc, keep_pairs: bool) -> IndexRecord:
    lsb = np.array([restricted_capacity(V, k) for k in range(V.r + 1)])
    return IndexRecord(index, path, channel_stats(V, include_pairs=keep_pairs), V.quantized, lsb,
                       V.num_outputs)


def synthesize_all(W: Dmc, n: int, max_outputs: int = DEFAULT_MAX_OUTPUTS,
                   merge_tol: float = DEFAULT_MERGE_TOL, keep_pairs: bool = False) -> SynthesisTable:
    """All 2**n virtual channels, each parent transformed exactly once.

    Traversal is depth-first so only one channel per level is alive at a time;
    records come out in index order.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    table = SynthesisTable(n, W.r, max_outputs, merge_tol, code_fingerprint(W, n))

    def walk(V: Dmc, path: str):
        if len(path) == n:
            table.records.append(_record(path_to_index(path), path, V, keep_pairs))
            return
        walk(step(V, "-", max_outputs, merge_tol), path + "-")
        walk(step(V, "+", max_outputs, merge_tol), path + "+")

    walk(W, "")
    return table


# ---------------------------------------------------------------- classification


@dataclass(frozen=True)
class ConfigClass:
    k: Optional[int]  # number of useless top levels, None when unpolarized
    epsilon: float

    @property
    def polarized(self) -> bool:
        return self.k is not None


UNPOLARIZED = None


def classify(stats: ChannelStats, epsilon: float) -> ConfigClass:
    """Region R_k: the first k level averages above 1-eps, the rest below eps."""
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    z = np.asarray(stats.z_level)
    bad = z > 1 - epsilon
    good = z < epsilon
    k = int(np.sum(bad))
    if np.all(bad[:k]) and np.all(good[k:]):
        return ConfigClass(k, epsilon)
    return ConfigClass(UNPOLARIZED, epsilon)


@dataclass
class PolarizationHistogram:
    """Fractions of indices per number of good bits k = 0..r."""

    delta: float
    epsilon: float
    theorem: np.ndarray  # |I-k|<delta and |I(V^[k])-k|<delta
    theorem_unpolarized: float
    capacity_only: np.ndarray  # |I-k|<delta
    rounded: np.ndarray  # nearest-integer capacity bins
    region: np.ndarray  # Z-region R_{r-k}
    region_unpolarized: float

    def mean_good_bits(self, which: str = "theorem") -> float:
        f = getattr(self, which)
        return float(np.arange(len(f)) @ f)


def polarization_histogram(table: SynthesisTable, delta: float = 0.1, epsilon: float = 0.1) -> PolarizationHistogram:
    r, N = table.r, table.N
    caps = table.capacities()
    lsb = np.array([rec.lsb_capacity for rec in table.records])
    ks = np.arange(r + 1)
    near = np.abs(caps[:, None] - ks[None, :]) < delta
    restricted_ok = np.abs(lsb - ks[None, :]) < delta
    theorem = (near & restricted_ok).sum(axis=0) / N
    capacity_only = near.sum(axis=0) / N
    rounded = np.bincount(np.clip(np.rint(caps).astype(int), 0, r), minlength=r + 1) / N
    region = np.zeros(r + 1)
    for rec in table.records:
        cls = classify(rec.stats, epsilon)
        if cls.polarized:
            region[r - cls.k] += 1.0 / N
    return PolarizationHistogram(
        delta, epsilon, theorem, float(1 - theorem.sum()), capacity_only, rounded, region,
        float(1 - region.sum()),
    )


def histogram_csv(hist: PolarizationHistogram, comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if comment is not None:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["good_bits", "theorem", "capacity_only", "rounded", "region"])
    for k in range(len(hist.theorem)):
        w.writerow([k, repr(float(hist.theorem[k])), repr(float(hist.capacity_only[k])),
                    repr(float(hist.rounded[k])), repr(float(hist.region[k]))])
    w.writerow(["unpolarized", repr(hist.theorem_unpolarized), "", "", repr(hist.region_unpolarized)])
    return buf.getvalue()


# ---------------------------------------------------------------- path sampling


@dataclass
class PathTrace:
    signs: str
    capacity: list
    z_level: list
    z_max_level: list
    quantized: bool

    @property
    def final_stats(self) -> tuple:
        return self.capacity[-1], self.z_level[-1], self.z_max_level[-1]


class PathSampler:
    """Samples trajectories of the channel process, memoizing shared prefixes."""

    def __init__(self, W: Dmc, max_outputs: int = DEFAULT_MAX_OUTPUTS, merge_tol: float = DEFAULT_MERGE_TOL,
                 cache_limit: int = 4096):
        self.W = W
        self.max_outputs = max_outputs
        self.merge_tol = merge_tol
        self.cache_limit = cache_limit
        self._channels = {"": W}
        self._stats = {}

    def channel(self, path: str) -> Dmc:
        V = self._channels.get(path)
        if V is None:
            V = step(self.channel(path[:-1]), path[-1], self.max_outputs, self.merge_tol)
            if len(self._channels) < self.cache_limit:
                self._channels[path] = V
        return V

    def stats(self, path: str) -> ChannelStats:
        entry = self._stats.get(path)
        if entry is None:
            V = self.channel(path)
            entry = (channel_stats(V, include_pairs=False), V.quantized)
            self._stats[path] = entry
        return entry[0]

    def quantized(self, path: str) -> bool:
        self.stats(path)
        return self._stats[path][1]

    def trace(self, signs: str) -> PathTrace:
        caps, zl, zm = [], [], []
        for t in range(len(signs) + 1):
            s = self.stats(signs[:t])
            caps.append(s.capacity)
            zl.append(s.z_level)
            zm.append(s.z_max_level)
        return PathTrace(signs, caps, zl, zm, self.quantized(signs))


def random_signs(n: int, seed: int, index: int = 0) -> str:
    g = _rng.stream(seed, index, _rng.PATH)
    return "".join("+" if b else "-" for b in g.integers(0, 2, size=n))


def sample_path(W: Dmc, n: int, seed: int, max_outputs: int = DEFAULT_MAX_OUTPUTS, index: int = 0,
                sampler: Optional[PathSampler] = None) -> PathTrace:
    """One trajectory of length n; the sign sequence depends only on (seed, index)."""
    sampler = sampler or PathSampler(W, max_outputs)
    return sampler.trace(random_signs(n, seed, index))


# ---------------------------------------------------------------- validators


@dataclass
class Check:
    name: str
    residual: float  # >= -tol means pass (slack for inequalities, -|error| for equalities)
    passed: bool


@dataclass
class ValidationReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


def _eq(name, a, b, tol):
    err = float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0
    return Check(name, -err, err <= tol)


def _le(name, lhs, rhs, tol):
    slack = float(np.min(np.asarray(rhs) - np.asarray(lhs))) if np.size(lhs) else 0.0
    return Check(name, slack, slack >= -tol)


def minus_bound(z_v_full: np.ndarray) -> np.ndarray:
    """Right-hand side 2 Z_v + sum_{d != 0, -v} Z_d Z_{v+d} for every v != 0."""
    q = len(z_v_full)
    out = np.empty(q - 1)
    d = np.arange(1, q)
    for v in range(1, q):
        dd = d[d != (q - v) % q]
        out[v - 1] = 2 * z_v_full[v] + np.sum(z_v_full[dd] * z_v_full[(v + dd) % q])
    return out


def level_max_bounds(z_max_level: np.ndarray, q: int) -> np.ndarray:
    """Upper bounds on Z_max^(r-j)(W-) for j = 0..r-1, returned indexed by level r-j."""
    r = len(z_max_level)
    zm = dict(zip(range(1, r + 1), z_max_level))
    bounds = np.empty(r)
    for j in range(r):
        total = sum(q / 2 ** (l + 1) * zm[r - l] for l in range(j))
        total += q / 2**j * zm[r - j]
        bounds[r - j - 1] = total
    return bounds


def validate_transform_identities(W: Dmc, tol: float = 1e-9, merge_tol: float = DEFAULT_MERGE_TOL) -> ValidationReport:
    s = channel_stats(W, include_pairs=False)
    sp = channel_stats(transform_plus(W, merge_tol), include_pairs=False)
    sm = channel_stats(transform_minus(W, merge_tol), include_pairs=False)
    q = W.q
    zfull = np.concatenate([[1.0], s.z_v])
    checks = [
        _eq("capacity conservation I(W+)+I(W-)=2I(W)", sp.capacity + sm.capacity, 2 * s.capacity, tol),
        _le("I(W-) <= I(W)", sm.capacity, s.capacity, tol),
        _le("I(W) <= I(W+)", s.capacity, sp.capacity, tol),
        _eq("Z_v(W+) = Z_v(W)^2", sp.z_v, s.z_v**2, tol),
        _eq("Z_max^(j)(W+) = Z_max^(j)(W)^2", sp.z_max_level, s.z_max_level**2, tol),
        _le("Z_v(W-) <= 2Z_v + sum Z_d Z_(v+d)", sm.z_v, minus_bound(zfull), tol),
        _le("Z_max^(r)(W-) <= q Z_max^(r)(W)", sm.z_max_level[-1], q * s.z_max_level[-1], tol),
    ]
    bounds = level_max_bounds(s.z_max_level, q)
    for j in range(1, W.r):
        lvl = W.r - j
        checks.append(_le(f"Z_max^({lvl})(W-) chain bound", sm.z_max_level[lvl - 1], bounds[lvl - 1], tol))
    for tag, st in (("W", s), ("W+", sp), ("W-", sm)):
        lo, hi = iwzw_bounds(st)
        checks.append(_le(f"{tag} capacity lower bound", lo, st.capacity, 1e-7))
        checks.append(_le(f"{tag} capacity upper bound", st.capacity, hi, 1e-7))
    return ValidationReport(checks)


def validate_bhatta_order(W: Dmc, delta_prime: float) -> ValidationReport:
    """If Z_v >= 1 - delta' q^-3 then every Z_v' with wt(v') <= wt(v) is >= 1 - delta'."""
    s = channel_stats(W, include_pairs=False)
    q, r = W.q, W.r
    trigger = 1 - delta_prime * q**-3.0
    wt = np.array([ordered_weight(v, r) for v in range(1, q)])
    checks = []
    for v in range(1, q):
        zv = s.z_v[v - 1]
        if zv < trigger:
            continue
        lower = wt <= wt[v - 1]
        slack = float(np.min(s.z_v[lower] - (1 - delta_prime)))
        checks.append(Check(f"order v={v}", slack, slack >= 0))
    return ValidationReport(checks)


def validate_stats(W: Dmc, stats: Optional[ChannelStats] = None, tol: float = 1e-9) -> ValidationReport:
    """Internal consistency of ChannelStats plus the capacity bounds."""
    s = stats or channel_stats(W)
    r, q = W.r, W.q
    checks = [
        _le("Z values <= 1", s.z_v, np.ones_like(s.z_v), 1e-12),
        _le("Z values >= 0", np.zeros_like(s.z_v), s.z_v, 1e-12),
        _eq("Z(W) from levels", s.z_avg, (2.0 ** np.arange(r)) @ s.z_level / (q - 1), tol),
        _le("Z_max >= Z_level", s.z_level, s.z_max_level, 1e-12),
    ]
    if s.z_pair is not None:
        offdiag = s.z_pair[~np.eye(q, dtype=bool)]
        checks.append(_eq("Z(W) from pairs", s.z_avg, offdiag.mean(), tol))
        checks.append(_eq("pair symmetry", s.z_pair, s.z_pair.T, 0.0))
    for i, c in enumerate(weight_classes(r)):
        checks.append(_eq(f"Z_{i + 1} is the class mean", s.z_level[i], s.z_v[c - 1].mean(), 1e-12))
    lo, hi = iwzw_bounds(s)
    checks.append(_le("capacity lower bound", lo, s.capacity, 1e-7))
    checks.append(_le("capacity upper bound", s.capacity, hi, 1e-7))
    return ValidationReport(checks)
