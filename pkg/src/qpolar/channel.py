"""q-ary input discrete memoryless channels and their scalar statistics.

Bit convention used throughout the package: a symbol ``v`` in ``[0, 2**r)`` has
bits ``v_1 .. v_r`` with ``v_1`` the most significant, so
``v = sum(v_j * 2**(r - j))``.  The ordered weight of ``v`` is the largest ``j``
with ``v_j != 0``; the odd symbols therefore all have weight ``r``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TINY = 1e-300
STOCHASTIC_TOL = 1e-9


class ChannelError(ValueError):
    """Invalid channel definition or channel-operation argument."""


@dataclass(frozen=True, eq=False)
class Dmc:
    """Explicit q-ary input DMC with ``transition[y, x] = W(y|x)``."""

    r: int
    labels: tuple
    transition: np.ndarray
    quantized: bool = False

    def __post_init__(self):
        if self.r < 1:
            raise ChannelError(f"r must be positive, got {self.r}")
        t = np.array(self.transition, dtype=float)
        if t.ndim != 2 or t.shape[1] != 2**self.r:
            raise ChannelError(f"transition must have shape (M, {2**self.r}), got {t.shape}")
        if t.shape[0] < 1:
            raise ChannelError("channel needs at least one output")
        if len(self.labels) != t.shape[0]:
            raise ChannelError("one label per output row is required")
        if len(set(self.labels)) != len(self.labels):
            raise ChannelError("output labels must be unique")
        if np.any(~np.isfinite(t)) or t.min() < 0 or t.max() > 1 + STOCHASTIC_TOL:
            raise ChannelError("transition probabilities must lie in [0, 1]")
        colsum = t.sum(axis=0)
        if np.max(np.abs(colsum - 1)) > STOCHASTIC_TOL:
            raise ChannelError(f"column sums deviate from 1 by {np.max(np.abs(colsum - 1)):.3g}")
        t = np.clip(t, 0.0, 1.0)
        t.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "labels", tuple(str(s) for s in self.labels))

    @property
    def q(self) -> int:
        return 2**self.r

    @property
    def num_outputs(self) -> int:
        return self.transition.shape[0]

    def index_of(self, label) -> int:
        idx = getattr(self, "_label_index", None)
        if idx is None:
            idx = {s: i for i, s in enumerate(self.labels)}
            object.__setattr__(self, "_label_index", idx)
        try:
            return idx[str(label)]
        except KeyError:
            raise ChannelError(f"unknown output label {label!r}") from None

    def __repr__(self):
        flag = ", quantized" if self.quantized else ""
        return f"Dmc(r={self.r}, outputs={self.num_outputs}{flag})"


@dataclass
class ChannelStats:
    capacity: float
    z_v: np.ndarray  # index v-1 for v = 1..q-1
    z_level: np.ndarray  # Z_1..Z_r
    z_avg: float
    z_max_level: np.ndarray
    z_pair: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def r(self) -> int:
        return len(self.z_level)


def ordered_weight(v: int, r: int) -> int:
    """Position (1 = most significant) of the lowest-order nonzero bit of ``v``."""
    if not 0 <= v < 2**r:
        raise ChannelError(f"symbol {v} out of range for r={r}")
    if v == 0:
        return 0
    trailing = (v & -v).bit_length() - 1
    return r - trailing


def weight_classes(r: int) -> list[np.ndarray]:
    """Symbols of each ordered weight 1..r; class i holds the odd multiples of 2**(r-i)."""
    return [np.arange(1, 2 ** i, 2) * 2 ** (r - i) for i in range(1, r + 1)]


def _masses_posteriors(W: Dmc):
    t = W.transition
    mass = t.mean(axis=1)
    keep = mass > TINY
    post = t[keep] / (W.q * mass[keep, None])
    return mass[keep], post


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > TINY, -p * np.log2(np.where(p > TINY, p, 1.0)), 0.0)
    return terms.sum(axis=1)


def capacity(W: Dmc) -> float:
    """Symmetric capacity in bits (uniform input)."""
    mass, post = _masses_posteriors(W)
    value = W.r - float(mass @ _entropy_rows(post))
    return min(max(value, 0.0), float(W.r))


def bhattacharyya_pair(W: Dmc, x: int, xp: int) -> float:
    q = W.q
    if not (0 <= x < q and 0 <= xp < q):
        raise ChannelError(f"symbols ({x}, {xp}) out of range for q={q}")
    if x == xp:
        return 1.0
    t = W.transition
    return float(np.sqrt(t[:, x] * t[:, xp]).sum())


def pair_matrix(W: Dmc) -> np.ndarray:
    s = np.sqrt(W.transition)
    z = s.T @ s
    z = 0.5 * (z + z.T)
    np.fill_diagonal(z, 1.0)
    return z


def channel_stats(W: Dmc, include_pairs: bool = True) -> ChannelStats:
    q, r = W.q, W.r
    z = pair_matrix(W)
    x = np.arange(q)
    # z_v[v] = mean over x of Z(x, x+v mod q)
    shifted = (x[None, :] + x[:, None]) % q  # [v, x] -> x+v
    zv_full = z[x[None, :], shifted].mean(axis=1)
    z_v = zv_full[1:]
    classes = weight_classes(r)
    z_level = np.array([zv_full[c].mean() for c in classes])
    z_max_level = np.array([zv_full[c].max() for c in classes])
    weights = 2.0 ** np.arange(r)
    z_avg = float(weights @ z_level / (q - 1))
    return ChannelStats(
        capacity=capacity(W),
        z_v=z_v,
        z_level=z_level,
        z_avg=z_avg,
        z_max_level=z_max_level,
        z_pair=z if include_pairs else None,
    )


def iwzw_bounds(stats: ChannelStats) -> tuple[float, float]:
    """Lower and upper capacity bounds implied by the level Bhattacharyya averages."""
    r = stats.r
    weights = 2.0 ** np.arange(r)
    z = np.clip(stats.z_level, 0.0, 1.0)
    lower = float(np.log2(2.0**r / (1.0 + weights @ z)))
    upper = float(np.sqrt(1.0 - z**2).sum())
    return lower, upper


def restrict_rightmost(W: Dmc, k: int) -> Dmc:
    """Channel seen by the r-k least significant bits, the k top bits uniform."""
    if not 0 <= k <= W.r - 1:
        raise ChannelError(f"k must lie in [0, {W.r - 1}], got {k}")
    if k == 0:
        return W
    rr = W.r - k
    t = W.transition.reshape(W.num_outputs, 2**k, 2**rr).mean(axis=1)
    return Dmc(rr, W.labels, t, W.quantized)


def restricted_capacity(W: Dmc, k: int) -> float:
    """Capacity of the channel restricted to the ``k`` least significant bits."""
    if k == 0:
        return 0.0
    return capacity(restrict_rightmost(W, W.r - k))


# ---------------------------------------------------------------- merging

_KEY_TOL = 1e-11


def projection_vectors(q: int) -> np.ndarray:
    """Two fixed random projections used to fingerprint posterior vectors."""
    rng = np.random.Generator(np.random.Philox(key=0x5EED))
    return rng.uniform(1.0, 2.0, size=(2, q))


def group_keys(keys: np.ndarray, tol: float = _KEY_TOL) -> np.ndarray:
    """Cluster rows of an (m, 2) key array; returns group ids in first-occurrence order.

    Rows whose keys are chained within ``tol`` on both coordinates share a group.
    """
    m = keys.shape[0]
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    gid = np.zeros(m, dtype=np.int64)
    brk = np.empty(m, dtype=bool)
    brk[0] = True
    for col in range(keys.shape[1]):
        # first column needs no tie-break on group, so a plain argsort suffices
        order = np.argsort(keys[:, col]) if col == 0 else np.lexsort((keys[:, col], gid))
        k = keys[order, col]
        g = gid[order]
        brk[1:] = (g[1:] != g[:-1]) | (np.diff(k) > tol)
        gid = np.empty(m, dtype=np.int64)
        gid[order] = np.cumsum(brk) - 1
    # renumber by first occurrence
    ng = int(gid.max()) + 1
    first = np.full(ng, m, dtype=np.int64)
    np.minimum.at(first, gid, np.arange(m))
    rank = np.empty(ng, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(ng)
    return rank[gid]


def from_posteriors(r: int, mass: np.ndarray, post: np.ndarray, labels, quantized=False) -> Dmc:
    t = (2**r) * mass[:, None] * post
    t = t / t.sum(axis=0, keepdims=True)
    return Dmc(r, labels, t, quantized)


def merge_equivalent_outputs(W: Dmc, rel_tol: float = 1e-12) -> Dmc:
    """Merge outputs with proportional likelihood columns and drop zero-mass outputs.

    The merged output takes the lexicographically smallest constituent label.
    """
    t = W.transition
    mass_all = t.mean(axis=1)
    keep = np.flatnonzero(mass_all > TINY)
    mass = mass_all[keep]
    post = t[keep] / (W.q * mass[:, None])
    keys = post @ projection_vectors(W.q).T
    gid = group_keys(keys, tol=max(rel_tol, _KEY_TOL))
    # verify each member against its group representative; split on mismatch
    ngroups = gid.max() + 1 if len(gid) else 0
    rep = np.full(ngroups, -1)
    for i, g in enumerate(gid):
        if rep[g] < 0:
            rep[g] = i
    bad = np.max(np.abs(post - post[rep[gid]]), axis=1) > rel_tol
    if np.any(bad):
        final = gid.copy()
        reps = {}
        next_id = ngroups
        for i in np.flatnonzero(bad):
            for j in reps.get(gid[i], []):
                if np.max(np.abs(post[i] - post[j])) <= rel_tol:
                    final[i] = final[j]
                    break
            else:
                final[i] = next_id
                next_id += 1
                reps.setdefault(gid[i], []).append(i)
        _, first = np.unique(final, return_index=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        gid = rank[final]
        ngroups = len(first)
    group_mass = np.bincount(gid, weights=mass, minlength=ngroups)
    # mass-weighted posterior keeps the merged channel exactly stochastic
    group_post = np.zeros((ngroups, W.q))
    np.add.at(group_post, gid, mass[:, None] * post)
    group_post /= group_mass[:, None]
    labels = [None] * ngroups
    for i, g in enumerate(gid):
        lab = W.labels[keep[i]]
        if labels[g] is None or lab < labels[g]:
            labels[g] = lab
    return from_posteriors(W.r, group_mass, group_post, labels, W.quantized)


# Largest alphabet handed to the quadratic greedy pass.
GREEDY_LIMIT = 4096


def _lattice_reduce(post, mass, labels, target):
    """Merge outputs whose posteriors share a cell of the finest lattice giving <= target cells."""
    rs = np.random.Generator(np.random.Philox(0x5EED)).integers(1, 2**62, size=post.shape[1])

    def cells(h):
        hashed = np.floor(post / h).astype(np.int64) @ rs  # wraps; collisions only coarsen further
        _, gid = np.unique(hashed, return_inverse=True)
        return gid.ravel(), int(gid.max()) + 1

    lo, hi = -40.0, 1.0  # log2 of the cell width; width 2 puts everything in one cell
    gid, _ = cells(2.0**hi)
    for _ in range(28):
        mid = 0.5 * (lo + hi)
        g, count = cells(2.0**mid)
        if count <= target:
            hi, gid = mid, g
        else:
            lo = mid
    ng = int(gid.max()) + 1
    gmass = np.bincount(gid, weights=mass, minlength=ng)
    gpost = np.zeros((ng, post.shape[1]))
    np.add.at(gpost, gid, mass[:, None] * post)
    gpost /= np.maximum(gmass, TINY)[:, None]
    order = np.lexsort((np.asarray(labels), gid))
    first = order[np.r_[True, gid[order][1:] != gid[order][:-1]]]
    return gpost, gmass, [labels[i] for i in first]


def quantize_outputs(W: Dmc, max_outputs: int) -> Dmc:
    """Greedy closest-posterior merging down to ``max_outputs`` outputs.

    Merged posteriors are mass-weighted averages; the result is flagged as quantized.
    Large alphabets are first binned on a posterior lattice down to at most
    ``min(GREEDY_LIMIT, 8 * max_outputs)`` cells, since the greedy pass is quadratic.
    """
    if max_outputs < W.q:
        raise ChannelError(f"max_outputs={max_outputs} must be at least q={W.q}")
    m = W.num_outputs
    if m <= max_outputs:
        return W
    t = W.transition
    mass = t.mean(axis=1)
    post = t / (W.q * np.maximum(mass, TINY)[:, None])
    labels = list(W.labels)
    pre = max(max_outputs, min(GREEDY_LIMIT, 8 * max_outputs))
    if m > pre:
        post, mass, labels = _lattice_reduce(post, mass, labels, pre)
        m = len(mass)
        if m <= max_outputs:
            return from_posteriors(W.r, mass, post, labels, quantized=True)
    alive = np.ones(m, dtype=bool)
    sq = (post**2).sum(axis=1)

    def dists(i):
        d = sq + sq[i] - 2.0 * post @ post[i]
        d[~alive] = np.inf
        d[i] = np.inf
        return d

    nn = np.empty(m, dtype=np.int64)
    nd = np.empty(m)
    for i in range(m):
        d = dists(i)
        nn[i] = np.argmin(d)
        nd[i] = d[nn[i]]
    count = m
    while count > max_outputs:
        i = int(np.argmin(nd))
        j = int(nn[i])
        a, b = (i, j) if i < j else (j, i)
        wa, wb = mass[a], mass[b]
        tot = wa + wb
        post[a] = (wa * post[a] + wb * post[b]) / tot if tot > 0 else post[a]
        mass[a] = tot
        sq[a] = post[a] @ post[a]
        labels[a] = min(labels[a], labels[b])
        alive[b] = False
        nd[b] = np.inf
        count -= 1
        d = dists(a)
        nn[a] = np.argmin(d)
        nd[a] = d[nn[a]]
        stale = np.flatnonzero(alive & ((nn == a) | (nn == b)))
        for s in stale:
            if s == a:
                continue
            ds = dists(s)
            nn[s] = np.argmin(ds)
            nd[s] = ds[nn[s]]
        closer = alive & (d < nd)
        closer[a] = False
        nn[closer] = a
        nd[closer] = d[closer]
    keep = np.flatnonzero(alive)
    return from_posteriors(W.r, mass[keep], post[keep], [labels[i] for i in keep], quantized=True)


# ---------------------------------------------------------------- builders


def _check_eps(r: int, eps: Sequence[float]) -> np.ndarray:
    e = np.asarray(eps, dtype=float)
    if e.shape != (r + 1,):
        raise ChannelError(f"expected {r + 1} probabilities for r={r}, got {e.size}")
    if np.any(e < 0) or abs(e.sum() - 1.0) > 1e-9:
        raise ChannelError("eps must be nonnegative and sum to 1")
    return e


def _bits(value: int, width: int) -> str:
    return format(value, f"0{width}b") if width else ""


def build_ordered_erasure(r: int, eps: Sequence[float]) -> Dmc:
    """Erasure level i hides the i most significant bits; the rest arrive intact."""
    e = _check_eps(r, eps)
    q = 2**r
    labels, rows = [], []
    x = np.arange(q)
    for i in range(r + 1):
        width = r - i
        for s in range(2**width):
            labels.append("?" * i + _bits(s, width))
            rows.append(np.where(x % 2**width == s, e[i], 0.0))
    return Dmc(r, labels, np.array(rows))


def ordered_distance(x: int, y: int, r: int) -> int:
    return ordered_weight(x ^ y, r)


def build_ordered_symmetric(r: int, eps: Sequence[float]) -> Dmc:
    e = _check_eps(r, eps)
    q = 2**r
    t = np.empty((q, q))
    for y in range(q):
        for x in range(q):
            j = ordered_distance(x, y, r)
            t[y, x] = e[0] if j == 0 else e[j] * 2.0 ** (-(j - 1))
    return Dmc(r, [_bits(y, r) for y in range(q)], t)


def capacity_ordered_erasure(r: int, eps: Sequence[float]) -> float:
    e = _check_eps(r, eps)
    return float(r - np.arange(r + 1) @ e)


def capacity_ordered_symmetric_closed_form(r: int, eps: Sequence[float]) -> float:
    """The literal closed-form expression with base-q logarithms.

    Reported next to the first-principles capacity; the two are not asserted equal.
    """
    e = _check_eps(r, eps)
    q = 2**r

    def logq(v):
        return np.log(v) / np.log(q) if v > 0 else 0.0

    total = r + (e[0] * logq(e[0]) if e[0] > 0 else 0.0)
    for i in range(1, r + 1):
        if e[i] > 0:
            total += e[i] * logq(e[i] / (q ** (i - 1) * (q - 1)))
    return float(total)


def identity_channel(r: int) -> Dmc:
    q = 2**r
    return Dmc(r, [str(y) for y in range(q)], np.eye(q))


def useless_channel(r: int) -> Dmc:
    return Dmc(r, ["0"], np.ones((1, 2**r)))


def quaternary_stable_channel() -> Dmc:
    """Two-output channel W(0|0)=W(0|2)=W(1|1)=W(1|3)=1; only the LSB is conveyed."""
    return Dmc(2, ["0", "1"], np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]))


def random_channel(r: int, m: int, rng: np.random.Generator) -> Dmc:
    """Random stochastic matrix with Dirichlet(1) columns; a few entries zeroed."""
    t = rng.dirichlet(np.ones(m), size=2**r).T
    mask = rng.random(t.shape) < 0.15
    t = np.where(mask, 0.0, t)
    for x in range(t.shape[1]):
        if t[:, x].sum() == 0:
            t[rng.integers(m), x] = 1.0
    t /= t.sum(axis=0, keepdims=True)
    return Dmc(r, [f"y{i}" for i in range(m)], t)


# ---------------------------------------------------------------- file format


def to_json(W: Dmc) -> dict:
    return {
        "r": W.r,
        "outputs": list(W.labels),
        "matrix": [[float(v) for v in row] for row in W.transition.T],
    }


def dumps(W: Dmc) -> str:
    # repr-based float formatting keeps 17 significant digits
    return json.dumps(to_json(W), indent=None, separators=(",", ":"))


def from_json(obj: dict) -> Dmc:
    try:
        r = int(obj["r"])
        labels = obj["outputs"]
        matrix = np.asarray(obj["matrix"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ChannelError(f"malformed channel file: {exc}") from None
    if matrix.ndim != 2 or matrix.shape[0] != 2**r:
        raise ChannelError(f"channel file needs {2**r} rows (one per input), got shape {matrix.shape}")
    return Dmc(r, labels, matrix.T)


def load(path) -> Dmc:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ChannelError(f"{path}: not valid JSON ({exc})") from None
    return from_json(obj)


def save(W: Dmc, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(W))
        fh.write("\n")


def fingerprint(W: Dmc) -> str:
    return hashlib.sha256(dumps(W).encode()).hexdigest()[:16]
