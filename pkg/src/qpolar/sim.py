"""Monte Carlo transmission over explicit channels and analytic error bounds."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from . import rng as _rng
from .channel import Dmc
from .code import CodeConstruction, data_placement, gn_multiply
from .decoder import ScDecoder
from .polarize import DEFAULT_MAX_OUTPUTS, PathSampler, SynthesisTable, random_signs


class Sampler:
    """Inverse-CDF output sampling from precomputed cumulative columns."""

    def __init__(self, W: Dmc):
        cdf = np.cumsum(W.transition, axis=0).T  # [x, y]
        cdf[:, -1] = np.inf  # absorbs rounding in the last column entry
        self.cdf = cdf
        self.W = W

    def sample(self, x, uniforms) -> np.ndarray:
        x = np.asarray(x)
        uniforms = np.asarray(uniforms)
        out = np.empty(x.shape, dtype=np.int64)
        for sym in np.unique(x):
            sel = x == sym
            out[sel] = np.searchsorted(self.cdf[sym], uniforms[sel], side="right")
        return out


def sample_output(W: Dmc, x: int, rng: np.random.Generator) -> int:
    """One output index drawn from W(.|x)."""
    return int(Sampler(W).sample(np.array([x]), rng.random(1))[0])


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def union_bound_terms(c: CodeConstruction, table: SynthesisTable) -> np.ndarray:
    """Per-index sum of Z_v over the nonzero offsets v whose top k_j bits are zero."""
    if c.fingerprint != table.fingerprint:
        raise ValueError("construction and synthesis table come from different channels")
    zv = table.z_v()  # (N, q-1), column v-1
    terms = np.zeros(c.N)
    for j, kj in enumerate(c.k):
        if kj == c.r:
            continue
        width = 2 ** (c.r - kj)
        terms[j] = max(0.0, float(zv[j, : width - 1].sum()))
    return terms


def union_bound(c: CodeConstruction, table: SynthesisTable) -> float:
    return float(union_bound_terms(c, table).sum())


@dataclass
class SimReport:
    trials: int
    frame_errors: int
    symbol_errors: int
    fer: float
    fer_ci95: tuple
    union_bound: float
    seed: int
    wall_time: float
    genie: bool = False
    decode_failures: int = 0
    stop_rule: str = "fixed trials"
    requested_trials: int = 0
    per_index_errors: Optional[list] = None
    first_error_counts: Optional[list] = None

    def to_json(self, include_time: bool = True) -> str:
        d = asdict(self)
        d["fer_ci95"] = list(self.fer_ci95)
        if not include_time:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True)

    CSV_FIELDS = ("trials", "frame_errors", "symbol_errors", "fer", "fer_ci95_low", "fer_ci95_high",
                  "union_bound", "seed", "genie", "decode_failures", "stop_rule", "wall_time")

    def csv_row(self, include_time: bool = True) -> str:
        vals = {
            "trials": self.trials, "frame_errors": self.frame_errors, "symbol_errors": self.symbol_errors,
            "fer": repr(self.fer), "fer_ci95_low": repr(self.fer_ci95[0]),
            "fer_ci95_high": repr(self.fer_ci95[1]), "union_bound": repr(self.union_bound),
            "seed": self.seed, "genie": int(self.genie), "decode_failures": self.decode_failures,
            "stop_rule": self.stop_rule, "wall_time": f"{self.wall_time:.3f}" if include_time else "",
        }
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([vals[k] for k in self.CSV_FIELDS])
        return buf.getvalue()

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS) + "\n"


@dataclass
class _BatchResult:
    frame_err: np.ndarray
    sym_err: np.ndarray
    dead: np.ndarray
    index_err: np.ndarray  # (T, N) bool
    first_err: np.ndarray  # (T,), -1 when none


def _run_batch(c, W, sampler, place, start, count, seed, genie):
    N, q = c.N, c.q
    sym_idx, shift = place
    frozen_u = np.asarray(c.frozen, dtype=np.int64) << (c.r - np.asarray(c.k))
    U = np.empty((count, N), dtype=np.int64)
    uni = np.empty((count, N))
    for t in range(count):
        g = _rng.stream(seed, start + t, _rng.TRIAL)
        bits = g.integers(0, 2, size=c.rate_bits)
        u = frozen_u.copy()
        np.add.at(u, sym_idx, bits << shift)
        U[t] = u
        uni[t] = g.random(N)
    X = gn_multiply(U, c.n, q)
    Y = sampler.sample(X, uni)
    dec = ScDecoder(c, W, check_fingerprint=False)
    u_hat, dead = dec.decode_indices(Y, genie_u=U if genie else None)
    data = c.data_indices
    wrong = u_hat[:, data] != U[:, data]
    index_err = np.zeros((count, N), dtype=bool)
    index_err[:, data] = wrong
    first = np.where(wrong.any(axis=1), data[np.argmax(wrong, axis=1)], -1)
    return _BatchResult(wrong.any(axis=1), wrong.sum(axis=1), dead, index_err, first)


def simulate_fer(W: Dmc, c: CodeConstruction, trials: int, seed: int, genie: bool = False,
                 table: Optional[SynthesisTable] = None, max_frame_errors: Optional[int] = None,
                 batch_size: int = 256, workers: int = 1) -> SimReport:
    """Encode random data, transmit, decode; trial ``i`` always uses stream (seed, i).

    With ``max_frame_errors`` the run stops at the trial that produced that many
    frame errors, independent of batching and worker count.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    ScDecoder(c, W)  # fingerprint check
    t0 = time.perf_counter()
    sampler = Sampler(W)
    place = data_placement(c)
    starts = list(range(0, trials, batch_size))
    results = []
    frame_total = 0
    width = max(1, workers)
    stopped = False

    def job(s):
        return _run_batch(c, W, sampler, place, s, min(batch_size, trials - s), seed, genie)

    with ThreadPoolExecutor(max_workers=width) as pool:
        for w0 in range(0, len(starts), width):
            for res in pool.map(job, starts[w0 : w0 + width]):
                errs = int(res.frame_err.sum())
                if max_frame_errors is not None and frame_total + errs >= max_frame_errors:
                    cum = frame_total + np.cumsum(res.frame_err)
                    cut = int(np.argmax(cum >= max_frame_errors)) + 1
                    res = _BatchResult(res.frame_err[:cut], res.sym_err[:cut], res.dead[:cut],
                                       res.index_err[:cut], res.first_err[:cut])
                    stopped = True
                results.append(res)
                frame_total += int(res.frame_err.sum())
                if stopped:
                    break
            if stopped:
                break
    frame_err = np.concatenate([r.frame_err for r in results])
    n_trials = len(frame_err)
    fe = int(frame_err.sum())
    per_index = first_counts = None
    if genie:
        per_index = np.concatenate([r.index_err for r in results]).sum(axis=0).tolist()
        first = np.concatenate([r.first_err for r in results])
        first_counts = np.bincount(first[first >= 0], minlength=c.N).tolist()
    ub = union_bound(c, table) if table is not None else float("nan")
    rule = "fixed trials" if max_frame_errors is None else f"stop at {max_frame_errors} frame errors"
    return SimReport(
        trials=n_trials,
        frame_errors=fe,
        symbol_errors=int(np.concatenate([r.sym_err for r in results]).sum()),
        fer=fe / n_trials,
        fer_ci95=wilson_interval(fe, n_trials),
        union_bound=ub,
        seed=seed,
        wall_time=time.perf_counter() - t0,
        genie=genie,
        decode_failures=int(np.concatenate([r.dead for r in results]).sum()),
        stop_rule=rule,
        requested_trials=trials,
        per_index_errors=per_index,
        first_error_counts=first_counts,
    )


@dataclass
class RateRow:
    n: int
    paths: int
    hits: int
    fraction: float
    ci_low: float
    ci_high: float
    threshold_log2: float  # log2 of the threshold, i.e. -2^(alpha n)


def polarization_rate_curve(W: Dmc, n_list: Sequence[int], alpha: float, paths_per_n: int, seed: int,
                            max_outputs: int = DEFAULT_MAX_OUTPUTS) -> list:
    """Fraction of sampled trajectories with Z_max^(r) below 2^(-2^(alpha n))."""
    sampler = PathSampler(W, max_outputs)
    rows = []
    for n in n_list:
        log_thr = -(2.0 ** (alpha * n))
        hits = 0
        for i in range(paths_per_n):
            signs = random_signs(n, seed, i)
            zmax = sampler.stats(signs).z_max_level[-1]
            if zmax <= 0 or np.log2(zmax) < log_thr:
                hits += 1
        lo, hi = wilson_interval(hits, paths_per_n)
        rows.append(RateRow(n, paths_per_n, hits, hits / paths_per_n, lo, hi, log_thr))
    return rows


def rate_curve_csv(rows, comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if comment is not None:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "paths", "hits", "fraction", "ci_low", "ci_high", "log2_threshold"])
    for row in rows:
        w.writerow([row.n, row.paths, row.hits, repr(row.fraction), repr(row.ci_low), repr(row.ci_high),
                    repr(row.threshold_log2)])
    return buf.getvalue()
