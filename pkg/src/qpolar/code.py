"""Frozen-prefix code construction and the G_N = B H2^(x)n encoder over Z_q."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .polarize import SynthesisTable


class CodeError(ValueError):
    pass


@dataclass(frozen=True)
class CodeConstruction:
    """Per-index frozen-prefix depth ``k[j]`` and the frozen top bits as an integer."""

    n: int
    r: int
    k: tuple
    frozen: tuple
    fingerprint: str

    def __post_init__(self):
        N = 2**self.n
        if len(self.k) != N or len(self.frozen) != N:
            raise CodeError(f"construction needs {N} entries, got {len(self.k)} and {len(self.frozen)}")
        for kj, fj in zip(self.k, self.frozen):
            if not 0 <= kj <= self.r:
                raise CodeError(f"prefix depth {kj} outside [0, {self.r}]")
            if not 0 <= fj < 2**kj:
                raise CodeError(f"frozen value {fj} does not fit in {kj} bits")

    @property
    def N(self) -> int:
        return 2**self.n

    @property
    def q(self) -> int:
        return 2**self.r

    @property
    def rate_bits(self) -> int:
        return int(sum(self.r - kj for kj in self.k))

    @property
    def data_indices(self) -> np.ndarray:
        """0-based indices that carry at least one data bit."""
        return np.flatnonzero(np.asarray(self.k) < self.r)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "r": self.r,
            "fingerprint": self.fingerprint,
            "k": list(self.k),
            "frozen": [format(f, f"0{kj}b") if kj else "" for kj, f in zip(self.k, self.frozen)],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CodeConstruction":
        try:
            k = tuple(int(v) for v in obj["k"])
            frozen = tuple(int(b, 2) if b else 0 for b in obj["frozen"])
            for kj, b in zip(k, obj["frozen"]):
                if len(b) != kj:
                    raise CodeError(f"frozen bitstring {b!r} does not have {kj} bits")
            return cls(int(obj["n"]), int(obj["r"]), k, frozen, str(obj["fingerprint"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CodeError):
                raise
            raise CodeError(f"malformed construction file: {exc}") from None


def save(c: CodeConstruction, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(c.to_json(), fh)
        fh.write("\n")


def load(path) -> CodeConstruction:
    with open(path, encoding="utf-8") as fh:
        try:
            return CodeConstruction.from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise CodeError(f"{path}: not valid JSON ({exc})") from None


def _frozen_values(k: Sequence[int], policy: str, seed: int) -> tuple:
    if policy == "zeros":
        return tuple(0 for _ in k)
    if policy == "random":
        g = _rng.stream(seed, 0, _rng.FROZEN)
        return tuple(int(g.integers(0, 2**kj)) if kj else 0 for kj in k)
    raise CodeError(f"unknown frozen-fill policy {policy!r}")


def prefix_depths(z_levels: np.ndarray, epsilon: float) -> np.ndarray:
    """k_j = largest level i with Z_i >= epsilon (0 if none)."""
    bad = np.asarray(z_levels) >= epsilon
    r = bad.shape[1]
    last = r - np.argmax(bad[:, ::-1], axis=1)
    return np.where(bad.any(axis=1), last, 0)


def construct_by_threshold(table: SynthesisTable, epsilon: float, frozen_fill: str = "zeros",
                           seed: int = 0) -> CodeConstruction:
    if not 0 < epsilon < 0.5:
        raise CodeError("epsilon must lie in (0, 0.5)")
    k = prefix_depths(table.z_levels(), epsilon)
    k = tuple(int(v) for v in k)
    return CodeConstruction(table.n, table.r, k, _frozen_values(k, frozen_fill, seed), table.fingerprint)


def construct_by_rate(table: SynthesisTable, target_bits: int, frozen_fill: str = "zeros",
                      seed: int = 0) -> CodeConstruction:
    """Most conservative threshold whose rate reaches the target, then trimmed to it exactly.

    Extra levels are frozen one at a time at the indices with the largest
    sum_i 2^(i-1) Z_i, which keeps every frozen set a prefix.
    """
    N, r = table.N, table.r
    if not 0 <= target_bits <= N * r:
        raise CodeError(f"target_bits must lie in [0, {N * r}]")
    z = table.z_levels()
    # rate changes only when the threshold passes one of the Z values
    cands = np.unique(np.concatenate([[0.0], np.nextafter(np.unique(z), np.inf)]))
    cands = np.append(cands, np.inf)

    def rate(eps):
        return int(np.sum(r - prefix_depths(z, eps)))

    lo, hi = 0, len(cands) - 1  # rate(cands[hi]) = N r >= target
    while lo < hi:
        mid = (lo + hi) // 2
        if rate(cands[mid]) >= target_bits:
            hi = mid
        else:
            lo = mid + 1
    k = prefix_depths(z, cands[lo]).astype(int)
    excess = int(np.sum(r - k)) - target_bits
    if excess > 0:
        badness = z @ (2.0 ** np.arange(r))
        order = np.argsort(-badness, kind="stable")
        while excess > 0:
            for j in order:
                if excess == 0:
                    break
                if k[j] < r:
                    k[j] += 1
                    excess -= 1
    k = tuple(int(v) for v in k)
    return CodeConstruction(table.n, table.r, k, _frozen_values(k, frozen_fill, seed), table.fingerprint)


def bit_reversal(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    rev = np.zeros_like(idx)
    for b in range(n):
        rev |= ((idx >> b) & 1) << (n - 1 - b)
    return rev


def gn_multiply(u, n: int, q: int) -> np.ndarray:
    """x = u B H2^(x)n over Z_q via bit reversal followed by n butterfly stages."""
    u = np.asarray(u, dtype=np.int64)
    if u.shape[-1] != 2**n:
        raise CodeError(f"length {u.shape[-1]} is not 2**{n}")
    x = u[..., bit_reversal(n)].copy()
    N = 2**n
    stride = 1
    while stride < N:
        v = x.reshape(*x.shape[:-1], N // (2 * stride), 2, stride)
        v[..., 0, :] = (v[..., 0, :] + v[..., 1, :]) % q
        stride *= 2
    return x % q


def encode(c: CodeConstruction, data_bits) -> tuple[np.ndarray, np.ndarray]:
    """Place data MSB-first into the free low bits of each symbol, then multiply by G_N."""
    bits = np.asarray(data_bits, dtype=np.int64).ravel()
    if bits.size != c.rate_bits:
        raise CodeError(f"expected {c.rate_bits} data bits, got {bits.size}")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise CodeError("data bits must be 0 or 1")
    u = np.empty(c.N, dtype=np.int64)
    pos = 0
    for j, (kj, fj) in enumerate(zip(c.k, c.frozen)):
        free = c.r - kj
        val = fj
        for b in bits[pos : pos + free]:
            val = (val << 1) | int(b)
        u[j] = val
        pos += free
    return u, gn_multiply(u, c.n, c.q)


def extract_data(c: CodeConstruction, u) -> np.ndarray:
    """Inverse of the bit placement in ``encode``."""
    out = []
    for j, kj in enumerate(c.k):
        free = c.r - kj
        val = int(u[j])
        out.extend((val >> (free - 1 - b)) & 1 for b in range(free))
    return np.array(out, dtype=np.int64)


def data_placement(c: CodeConstruction) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized placement: (symbol index, bit shift) of every data bit."""
    sym, shift = [], []
    for j, kj in enumerate(c.k):
        free = c.r - kj
        for b in range(free):
            sym.append(j)
            shift.append(free - 1 - b)
    return np.array(sym, dtype=np.int64), np.array(shift, dtype=np.int64)


# ---------------------------------------------------------------- symbol files


def write_symbols(symbols, path, binary: bool = False) -> None:
    symbols = np.asarray(symbols, dtype=np.int64)
    if binary:
        if symbols.size and (symbols.min() < 0 or symbols.max() > 255):
            raise CodeError("binary mode needs symbols in [0, 255]")
        with open(path, "wb") as fh:
            fh.write(symbols.astype(np.uint8).tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(" ".join(str(int(s)) for s in symbols))
            fh.write("\n")


def read_symbols(path, binary: bool = False) -> np.ndarray:
    if binary:
        with open(path, "rb") as fh:
            return np.frombuffer(fh.read(), dtype=np.uint8).astype(np.int64)
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split()
    try:
        return np.array([int(t) for t in tokens], dtype=np.int64)
    except ValueError as exc:
        raise CodeError(f"{path}: expected whitespace-separated integers ({exc})") from None


def read_tokens(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return fh.read().split()
