# AnnuStitch — Statistics Engine
# Wilcoxon signed-rank test: exact null distribution for small samples, normal approximation above.

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import stats

from annustitch.errors import StageError

logger = logging.getLogger(__name__)

EXACT_MAX_N = 25
ZERO_HANDLING = "wilcox"  # zero differences are discarded before ranking


class StatError(StageError):
    stage = "eval_report"


class AllZeroDifferences(StatError):
    pass


class LengthMismatch(StatError):
    pass


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    p_value: float
    n: int  # non-zero differences
    w_plus: float
    w_minus: float
    method: Literal["exact", "approx"]
    zeros_discarded: int

    def __iter__(self):
        return iter((self.statistic, self.p_value))


def signed_ranks(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks of |d| and the sign of each difference."""
    return stats.rankdata(np.abs(d), method="average"), np.sign(d)


def exact_null_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """
    Number of sign assignments reaching each doubled positive rank sum, 0 .. sum(doubled_ranks).
    Subset-sum DP over Python integers, so counts stay exact past 2**63; equals enumeration
    of all 2**n assignments.
    """
    total = int(np.sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def _exact_p(ranks: np.ndarray, positive: np.ndarray) -> float:
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    w2 = int(doubled[positive].sum())
    w2 = min(w2, total - w2)
    counts = exact_null_counts(doubled)
    sums = np.arange(total + 1)
    extreme = np.minimum(sums, total - sums) <= w2
    return min(1.0, int(counts[extreme].sum()) / 2 ** len(doubled))


def _approx_p(ranks: np.ndarray, w_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
    return min(1.0, 2.0 * float(stats.norm.sf(z)))


def wilcoxon_signed_rank(
    x, y, method: Literal["auto", "exact", "approx"] = "auto"
) -> WilcoxonResult:
    """
    Two-sided paired test on d = x - y. Exact for n <= 25 under "auto"; the normal
    approximation carries tie and continuity corrections.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatch(f"paired samples differ in length: {x.size} vs {y.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples must be finite")
    d = x - y
    nonzero = d[d != 0]
    if nonzero.size == 0:
        raise AllZeroDifferences(f"all {d.size} differences are zero")

    ranks, sign = signed_ranks(nonzero)
    positive = sign > 0
    w_plus = float(ranks[positive].sum())
    w_minus = float(ranks[~positive].sum())
    n = nonzero.size
    use_exact = method == "exact" or (method == "auto" and n <= EXACT_MAX_N)
    p = _exact_p(ranks, positive) if use_exact else _approx_p(ranks, w_plus)
    logger.debug("wilcoxon n=%d W+=%.1f W-=%.1f p=%.6g (%s)", n, w_plus, w_minus, p, "exact" if use_exact else "approx")
    return WilcoxonResult(
        statistic=min(w_plus, w_minus),
        p_value=p,
        n=n,
        w_plus=w_plus,
        w_minus=w_minus,
        method="exact" if use_exact else "approx",
        zeros_discarded=int(d.size - n),
    )
