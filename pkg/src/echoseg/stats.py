"""Agreement and hypothesis statistics for method comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc
from scipy.stats import rankdata


class UndefinedStatistic(ValueError):
    """The statistic has no value for this input (e.g. a constant series)."""


@dataclass(frozen=True)
class AgreementReport:
    n: int
    r: float  # Spearman
    r2: float  # least-squares determination of y on x
    bias: float
    loa: float  # half-width, 1.96 * SD of differences

    @property
    def spearman_r2(self) -> float:
        return self.r * self.r


@dataclass(frozen=True)
class BinaryAgreement:
    confusion: tuple[tuple[int, int], tuple[int, int]]  # rows: reference 0/1, cols: predicted 0/1
    accuracy: float
    kappa: float


def _pair(x, y, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired series must be 1-D and of equal length")
    if len(x) < min_n:
        raise ValueError(f"need at least {min_n} pairs, got {len(x)}")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair(x, y, 2)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise UndefinedStatistic("correlation of a constant series")
    return float(np.clip(dx @ dy / math.sqrt(sxx * syy), -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(x, y, 3)
    return pearson(rankdata(x), rankdata(y))


def r_squared(x, y) -> float:
    """Coefficient of determination of the least-squares line of y on x."""
    x, y = _pair(x, y, 3)
    dx = x - x.mean()
    sxx = dx @ dx
    if sxx == 0:
        raise UndefinedStatistic("r^2 with constant x")
    dy = y - y.mean()
    syy = dy @ dy
    if syy == 0:
        return 1.0
    slope = (dx @ dy) / sxx
    resid = dy - slope * dx
    return float(np.clip(1 - (resid @ resid) / syy, 0.0, 1.0))


def bland_altman(x, y) -> tuple[float, float]:
    """Bias (mean of x - y) and limits of agreement half-width (1.96 sample SD)."""
    x, y = _pair(x, y, 2)
    d = x - y
    return float(d.mean()), float(1.96 * d.std(ddof=1))


def agreement(x, y) -> AgreementReport:
    bias, loa = bland_altman(x, y)
    return AgreementReport(len(x), spearman(x, y), r_squared(x, y), bias, loa)


def cohen_kappa(a, b) -> float:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("rater series must be non-empty and of equal length")
    po = np.mean(a == b)
    pa, pb = a.mean(), b.mean()
    pe = pa * pb + (1 - pa) * (1 - pb)
    if pe == 1:
        raise UndefinedStatistic("kappa undefined: both raters constant and equal")
    return float((po - pe) / (1 - pe))


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap 2|A∩B| / (|A|+|B|); two empty masks score 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2 * np.logical_and(a, b).sum() / total)


def bootstrap_ci(values, resamples: int = 10_000, level: float = 0.95, seed: int = 0,
                 block: int = 1000) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean.

    Resample ``i`` draws from its own generator seeded by ``(seed, i)``, so
    the result does not depend on how resamples are grouped into blocks.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("bootstrap needs at least 2 values")
    means = np.empty(resamples)
    for start in range(0, resamples, block):
        for i in range(start, min(start + block, resamples)):
            # one counter-based stream per resample, keyed by (seed, i)
            rng = np.random.Generator(np.random.Philox(key=(seed << 64) | i))
            means[i] = v[rng.integers(0, v.size, v.size)].mean()
    alpha = (1 - level) / 2
    lo, hi = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def mann_whitney_u(x, y) -> tuple[float, float]:
    """U statistic of ``x`` and its two-sided normal-approximation p-value.

    U = R_x - n(n+1)/2 with average ranks for ties. The p-value uses
    z = (|U - nm/2| - 0.5) / sigma with the tie-corrected variance
    sigma^2 = nm/12 * ((N+1) - sum(t^3 - t) / (N(N-1))).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = len(x), len(y)
    if n < 1 or m < 1:
        raise ValueError("both samples need at least one value")
    N = n + m
    ranks = rankdata(np.concatenate([x, y]))
    u = float(ranks[:n].sum() - n * (n + 1) / 2)
    _, counts = np.unique(np.concatenate([x, y]), return_counts=True)
    tie = float(np.sum(counts ** 3 - counts))
    var = n * m / 12 * ((N + 1) - (tie / (N * (N - 1)) if N > 1 else 0.0))
    if var <= 0:
        return u, 1.0
    z = (abs(u - n * m / 2) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)
    return u, float(min(1.0, erfc(z / math.sqrt(2))))


def binary_agreement(pred, ref) -> BinaryAgreement:
    pred = np.asarray(pred).astype(bool)
    ref = np.asarray(ref).astype(bool)
    conf = ((int(np.sum(~ref & ~pred)), int(np.sum(~ref & pred))),
            (int(np.sum(ref & ~pred)), int(np.sum(ref & pred))))
    acc = float(np.mean(pred == ref))
    try:
        k = cohen_kappa(pred, ref)
    except UndefinedStatistic:
        k = float("nan")
    return BinaryAgreement(conf, acc, k)


def classify_normal(values, thresholds: dict, measurement: str, reference=None, sex=None):
    """Flag abnormal values against a configured cutoff.

    ``thresholds[measurement]`` holds ``cutoff`` and ``abnormal`` ("above" or
    "below"); an optional ``by_sex`` mapping ({"M": cutoff, "F": cutoff})
    overrides the cutoff per subject when ``sex`` is given. Returns boolean
    labels (True = abnormal) and, when ``reference`` labels are given, a
    :class:`BinaryAgreement` against them.
    """
    if measurement not in thresholds:
        raise KeyError(f"no threshold configured for {measurement}")
    rule = thresholds[measurement]
    v = np.asarray(values, dtype=float)
    cutoff = np.full(v.shape, float(rule["cutoff"]))
    if sex is not None and "by_sex" in rule:
        for i, s in enumerate(sex):
            if s in rule["by_sex"]:
                cutoff[i] = float(rule["by_sex"][s])
    direction = rule.get("abnormal", "below")
    if direction == "above":
        labels = v > cutoff
    elif direction == "below":
        labels = v < cutoff
    else:
        raise ValueError(f"threshold direction must be 'above' or 'below', got {direction!r}")
    if reference is None:
        return labels, None
    return labels, binary_agreement(labels, reference)
