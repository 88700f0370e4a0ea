"""Successive-cancellation decoding with frozen-prefix constrained decisions.

Likelihoods are kept in the linear domain and renormalized at every node.  The
decoder runs on a batch of frames at once; frames never interact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import Dmc
from .code import CodeConstruction, bit_reversal, extract_data
from .polarize import code_fingerprint


class FingerprintMismatch(ValueError):
    """Construction was built for a different channel or block length."""


def _normalize(v: np.ndarray):
    s = v.sum(axis=-1, keepdims=True)
    dead = s[..., 0] <= 0
    if np.any(dead):
        v = np.where(dead[..., None], 1.0, v)
        s = np.where(dead[..., None], v.shape[-1], s)
    return v / s, dead


def _rescale(v: np.ndarray) -> np.ndarray:
    # keeps products of two tiny operands from underflowing
    top = v.max(axis=-1, keepdims=True)
    return v / np.where(top > 0, top, 1.0)


def _sum_index(q: int) -> np.ndarray:
    return (np.arange(q)[:, None] + np.arange(q)[None, :]) % q


def node_minus(a: np.ndarray, b: np.ndarray):
    """out[u1] ~ sum_u2 a[u1+u2] b[u2]; returns (likelihoods, dead-node mask)."""
    q = a.shape[-1]
    a, b = _rescale(a), _rescale(b)
    out = np.einsum("...ij,...j->...i", a[..., _sum_index(q)], b)
    return _normalize(out)


def node_plus(a: np.ndarray, b: np.ndarray, u1_hat):
    """out[u2] ~ a[u1_hat+u2] b[u2]; returns (likelihoods, dead-node mask)."""
    q = a.shape[-1]
    a, b = _rescale(a), _rescale(b)
    u1 = np.asarray(u1_hat)[..., None]
    shifted = np.take_along_axis(a, (u1 + np.arange(q)) % q, axis=-1)
    return _normalize(shifted * b)


def channel_posterior(W: Dmc, y) -> np.ndarray:
    row = W.transition[W.index_of(y)]
    out, _ = _normalize(row.astype(float))
    return out


@dataclass
class DecodeResult:
    data_bits: np.ndarray
    u_hat: np.ndarray
    failure: bool


class ScDecoder:
    """Decoder bound to one construction and channel.

    Holds per-call scratch only; use one instance per thread.
    """

    def __init__(self, c: CodeConstruction, W: Dmc, check_fingerprint: bool = True):
        if c.r != W.r:
            raise FingerprintMismatch(f"construction has r={c.r}, channel has r={W.r}")
        if check_fingerprint and c.fingerprint != code_fingerprint(W, c.n):
            raise FingerprintMismatch("construction fingerprint does not match this channel and n")
        self.c = c
        self.W = W
        q = W.q
        self.q = q
        t = W.transition
        s = t.sum(axis=1, keepdims=True)
        self._leaf = np.where(s > 0, t / np.where(s > 0, s, 1.0), 1.0 / q)
        self._perm = bit_reversal(c.n)
        k = np.asarray(c.k)
        free = c.r - k
        self._lo = np.asarray(c.frozen) << free
        self._width = 2**free
        self._fully_frozen = k == c.r
        self.last_likelihoods = None

    def posteriors(self, y_idx: np.ndarray) -> np.ndarray:
        """Leaf likelihoods for output indices, shape (T, N, q)."""
        return self._leaf[y_idx]

    def decode_indices(self, y_idx, genie_u: Optional[np.ndarray] = None, record: bool = False):
        """Decode a batch of frames given output indices of shape (T, N).

        Returns (u_hat (T, N), failure (T,)).  With ``genie_u`` the true symbols are
        fed back in place of the decisions.  With ``record`` the normalized
        likelihood vector seen at every index is kept in ``self.last_likelihoods``.
        """
        y_idx = np.atleast_2d(np.asarray(y_idx))
        T, N = y_idx.shape
        L = self.posteriors(y_idx)[:, self._perm]  # L[:, k] is the likelihood of v_k = x_{br(k)}
        u_hat = np.zeros((T, N), dtype=np.int64)
        dead = np.zeros(T, dtype=bool)
        self.last_likelihoods = np.zeros((T, N, self.q)) if record else None
        self._rec(L, 0, u_hat, dead, genie_u)
        return u_hat, dead

    def _decide(self, L: np.ndarray, j: int) -> np.ndarray:
        if self._fully_frozen[j]:
            return np.full(L.shape[0], self._lo[j], dtype=np.int64)
        lo, w = self._lo[j], self._width[j]
        # np.argmax keeps the first maximum, i.e. the smallest symbol on ties
        return lo + np.argmax(L[:, lo : lo + w], axis=1)

    def _rec(self, L, start, u_hat, dead, genie_u):
        K = L.shape[1]
        if K == 1:
            if self.last_likelihoods is not None:
                self.last_likelihoods[:, start] = L[:, 0]
            d = self._decide(L[:, 0], start)
            u_hat[:, start] = d
            fb = d if genie_u is None else genie_u[:, start]
            return fb[:, None]
        h = K // 2
        a, b = L[:, :h], L[:, h:]
        La, da = node_minus(a, b)
        dead |= da.any(axis=1)
        va = self._rec(La, start, u_hat, dead, genie_u)
        Lb, db = node_plus(a, b, va)
        dead |= db.any(axis=1)
        vb = self._rec(Lb, start + h, u_hat, dead, genie_u)
        return np.concatenate([(va + vb) % self.q, vb], axis=1)

    def decode(self, y) -> DecodeResult:
        """Decode one frame of output labels."""
        y = list(y)
        if len(y) != self.c.N:
            raise ValueError(f"expected {self.c.N} received symbols, got {len(y)}")
        idx = np.array([[self.W.index_of(s) for s in y]])
        u_hat, dead = self.decode_indices(idx)
        return DecodeResult(extract_data(self.c, u_hat[0]), u_hat[0], bool(dead[0]))


def decode(c: CodeConstruction, W: Dmc, y) -> DecodeResult:
    return ScDecoder(c, W).decode(y)
