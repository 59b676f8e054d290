"""Comparisons between segmentations and between probability traces."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal
from scipy import stats as sps

from .align import ProbTrace
from .segmenter import BoundaryVector

DEFAULT_PERMUTATIONS = 100_000
DEFAULT_MAX_LAG_MS = 3000
_BATCH_ELEMENTS = 1 << 20


def _bits(v) -> np.ndarray:
    return np.asarray(v.bits if isinstance(v, BoundaryVector) else v, dtype=np.int8)


def hamming(a, b) -> float:
    """Proportion of positions at which two boundary vectors differ."""
    x, y = _bits(a), _bits(b)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    if not len(x):
        raise ValueError("empty boundary vectors")
    return float(np.count_nonzero(x != y)) / len(x)


@dataclass(frozen=True)
class PermutationTestResult:
    observed_distance: float
    p_value: float
    n_permutations: int
    seed: int | None
    n_smaller: int = 0
    smoothed: bool = False

    def to_json(self) -> dict:
        return {"observed": self.observed_distance, "p": self.p_value,
                "n": self.n_permutations, "seed": self.seed, "smoothed": self.smoothed}


def permutation_test(model, human, n: int = DEFAULT_PERMUTATIONS, seed: int = 0, *,
                     exhaustive: bool = False, smoothed: bool = False) -> PermutationTestResult:
    """Hamming distance against a null of randomly permuted model positions.

    The p-value is the fraction of permutations whose distance is strictly
    smaller than the observed one. ``smoothed`` reports ``(k + 1) / (n + 1)``
    instead. ``exhaustive`` enumerates every permutation (short vectors
    only); ``n`` and ``seed`` are then ignored.

    Random permutations come from a Philox generator in fixed-size batches,
    so a given seed gives the same result everywhere.
    """
    x, y = _bits(model), _bits(human)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")
    L = len(x)
    observed = int(np.count_nonzero(x != y))
    if exhaustive:
        if L > 10:
            raise ValueError("exhaustive permutation test limited to length <= 10")
        perms = np.array(list(itertools.permutations(range(L))), dtype=np.intp).reshape(-1, L)
        d = np.count_nonzero(x[perms] != y, axis=1)
        k, total = int(np.count_nonzero(d < observed)), len(perms)
        seed_out = None
    else:
        if n < 1:
            raise ValueError("need at least one permutation")
        rng = np.random.Generator(np.random.Philox(seed))
        batch = max(1, _BATCH_ELEMENTS // max(L, 1))
        k, done = 0, 0
        while done < n:
            m = min(batch, n - done)
            shuffled = rng.permuted(np.broadcast_to(x, (m, L)), axis=1)
            d = np.count_nonzero(shuffled != y, axis=1)
            k += int(np.count_nonzero(d < observed))
            done += m
        total, seed_out = n, seed
    p = (k + 1) / (total + 1) if smoothed else k / total
    return PermutationTestResult(observed / L if L else 0.0, p, total, seed_out, k, smoothed)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_two_sided: float
    df: float
    group_means: tuple[float, float]
    group_sds: tuple[float, float]

    def to_json(self) -> dict:
        return {"t": self.t, "p": self.p_two_sided, "df": self.df,
                "means": list(self.group_means), "sds": list(self.group_sds)}


def distance_ttest(model_distances: Sequence[float], human_distances: Sequence[float]
                   ) -> TTestResult:
    """Welch two-sample t-test (unequal variances), two-sided."""
    a = np.asarray(model_distances, dtype=float)
    b = np.asarray(human_distances, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two values")
    # constant groups get exact moments; float round-off would fake a spread
    ma = float(a[0]) if np.ptp(a) == 0 else float(a.mean())
    mb = float(b[0]) if np.ptp(b) == 0 else float(b.mean())
    sa = 0.0 if np.ptp(a) == 0 else float(a.std(ddof=1))
    sb = 0.0 if np.ptp(b) == 0 else float(b.std(ddof=1))
    va, vb = sa ** 2 / len(a), sb ** 2 / len(b)
    if va + vb == 0:
        # both groups constant
        t = 0.0 if ma == mb else math.copysign(math.inf, ma - mb)
        return TTestResult(t, 1.0 if ma == mb else 0.0, float(len(a) + len(b) - 2),
                           (ma, mb), (sa, sb))
    t = (ma - mb) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    p = float(2 * sps.t.sf(abs(t), df))
    return TTestResult(float(t), min(p, 1.0), float(df), (ma, mb), (sa, sb))


def interpolate_missing(trace: ProbTrace) -> ProbTrace:
    """Linear interpolation over missing samples; edges hold the nearest value."""
    v = trace.values
    ok = ~np.isnan(v)
    if not ok.any():
        raise ValueError("trace has no defined values")
    idx = np.arange(len(v))
    out = v.copy()
    out[~ok] = np.interp(idx[~ok], idx[ok], v[ok])
    return ProbTrace(out)


@dataclass(frozen=True)
class CrossCorrelation:
    lags_ms: np.ndarray
    r: np.ndarray
    zero_lag_r: float
    peak: tuple[int, float]
    p_zero_lag: float
    n_eff: float = math.nan

    def to_json(self) -> dict:
        return {"zero_lag_r": self.zero_lag_r, "p": self.p_zero_lag,
                "peak_lag_ms": self.peak[0], "peak_r": self.peak[1], "n_eff": self.n_eff}


def lagged_pearson(a: np.ndarray, b: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r between ``a[t]`` and ``b[t + lag]`` over the overlapping samples.

    A positive lag means ``b`` trails ``a``. Sums over the overlaps come from
    cumulative sums and one FFT cross-correlation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(a)
    if len(b) != n:
        raise ValueError("traces differ in length")
    max_lag = min(int(max_lag), n - 2)
    if max_lag < 0:
        raise ValueError("traces too short to correlate")
    a = a - a.mean()
    b = b - b.mean()
    lags = np.arange(-max_lag, max_lag + 1)
    # full[k] = sum_t b[t + k - (n - 1)] * a[t]
    full = signal.correlate(b, a, mode="full", method="fft")
    sxy = full[lags + n - 1]
    ca = np.concatenate(([0.0], np.cumsum(a)))
    cb = np.concatenate(([0.0], np.cumsum(b)))
    ca2 = np.concatenate(([0.0], np.cumsum(a * a)))
    cb2 = np.concatenate(([0.0], np.cumsum(b * b)))
    # lag >= 0: a[0:n-lag] with b[lag:n]; lag < 0: a[-lag:n] with b[0:n+lag]
    a_lo = np.where(lags >= 0, 0, -lags)
    a_hi = np.where(lags >= 0, n - lags, n)
    b_lo = np.where(lags >= 0, lags, 0)
    b_hi = np.where(lags >= 0, n, n + lags)
    m = (a_hi - a_lo).astype(float)
    sx, sy = ca[a_hi] - ca[a_lo], cb[b_hi] - cb[b_lo]
    sxx, syy = ca2[a_hi] - ca2[a_lo], cb2[b_hi] - cb2[b_lo]
    cov = sxy - sx * sy / m
    vx = sxx - sx * sx / m
    vy = syy - sy * sy / m
    with np.errstate(invalid="ignore", divide="ignore"):
        r = cov / np.sqrt(vx * vy)
    r = np.clip(np.nan_to_num(r, nan=0.0), -1.0, 1.0)
    return lags, r


def lag1_autocorr(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    den = float(np.dot(x, x))
    return float(np.dot(x[:-1], x[1:]) / den) if den > 0 else 0.0


def effective_n(a: np.ndarray, b: np.ndarray) -> float:
    """Sample size corrected for lag-1 autocorrelation of both series."""
    rho = lag1_autocorr(a) * lag1_autocorr(b)
    n = len(a)
    if rho >= 1:
        return 3.0
    return max(3.0, n * (1 - rho) / (1 + rho))


def correlation_p(r: float, n_eff: float) -> float:
    """Two-sided p for Pearson ``r`` against zero with ``n_eff - 2`` degrees of freedom."""
    df = n_eff - 2
    if abs(r) >= 1:
        return 0.0
    t = r * math.sqrt(df / (1 - r * r))
    return float(2 * sps.t.sf(abs(t), df))


def block_permutation_p(a: np.ndarray, b: np.ndarray, *, block_ms: int = 1000,
                        n: int = 1000, seed: int = 0) -> float:
    """Zero-lag p from shuffling ``block_ms`` blocks of ``b``; ``(k + 1) / (n + 1)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r0 = abs(float(np.corrcoef(a, b)[0, 1]))
    blocks = [b[i:i + block_ms] for i in range(0, len(b), block_ms)]
    rng = np.random.Generator(np.random.Philox(seed))
    az = (a - a.mean()) / a.std()
    k = 0
    for _ in range(n):
        perm = np.concatenate([blocks[i] for i in rng.permutation(len(blocks))])
        bz = (perm - perm.mean()) / perm.std()
        if abs(float(np.mean(az * bz))) >= r0:
            k += 1
    return (k + 1) / (n + 1)


def cross_correlate(a: ProbTrace, b: ProbTrace, max_lag_ms: int = DEFAULT_MAX_LAG_MS, *,
                    method: str = "neff", seed: int = 0, n_block_permutations: int = 1000
                    ) -> CrossCorrelation:
    """Lagged Pearson correlation of two fully defined traces.

    The zero-lag p-value uses a t-test with an autocorrelation-corrected
    effective sample size (``method="neff"``) or a block permutation of ``b``
    in 1 s blocks (``method="block"``).
    """
    x = a.values if isinstance(a, ProbTrace) else np.asarray(a, dtype=float)
    y = b.values if isinstance(b, ProbTrace) else np.asarray(b, dtype=float)
    if len(x) != len(y):
        raise ValueError("traces differ in length")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("traces must be fully defined; interpolate first")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("zero-variance trace")
    lags, r = lagged_pearson(x, y, max_lag_ms)
    zero = float(r[lags == 0][0])
    k = int(np.argmax(r))
    n_eff = effective_n(x, y)
    if method == "neff":
        p = correlation_p(zero, n_eff)
    elif method == "block":
        p = block_permutation_p(x, y, n=n_block_permutations, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    return CrossCorrelation(lags, r, zero, (int(lags[k]), float(r[k])), p, float(n_eff))


def write_crosscorr_csv(cc: CrossCorrelation, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("lag_ms,r\n")
        for lag, r in zip(cc.lags_ms, cc.r):
            fh.write(f"{int(lag)},{float(r)!r}\n")
