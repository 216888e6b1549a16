"""Evaluation metrics: CCC, PCC, SSE, group-of-humans baseline, rank-sum test.

CCC uses population (1/n) moments throughout:

    ccc = 2*cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))**2)

The rank-sum statistic follows the R convention: W is the Mann-Whitney U of
the first sample (number of pairs where a beats b, ties counted half).
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

EXACT_RANKSUM_LIMIT = 12


def _as_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length 1-D arrays, got {x.shape} vs {y.shape}")
    return x, y


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments.

    Degenerate case: two identical constant series have zero variance and
    zero mean gap; defined as 0.0 (logged) rather than 0/0.
    """
    x, y = _as_pair(x, y)
    if x.size < 2:
        raise ValueError("ccc requires at least 2 samples")
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        log.debug("ccc: both inputs constant and equal; returning 0.0")
        return 0.0
    return float(2.0 * cov / denom)


def pcc(x, y) -> float:
    """Pearson correlation coefficient. Zero-variance input is undefined."""
    x, y = _as_pair(x, y)
    if x.size < 2:
        raise ValueError("pcc requires at least 2 samples")
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pcc undefined for zero-variance input")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def sse(x, y) -> float:
    """Mean squared difference per frame (callers pass standardized values)."""
    x, y = _as_pair(x, y)
    if x.size == 0:
        raise ValueError("sse requires at least 1 sample")
    return float(np.mean((x - y) ** 2))


def human_baseline(traces) -> float:
    """Mean CCC over all unordered pairs of annotation traces."""
    if len(traces) < 2:
        raise ValueError("human baseline needs at least 2 annotators")
    values = [np.asarray(t.values, dtype=np.float64) for t in traces]
    lengths = {v.size for v in values}
    if len(lengths) != 1:
        raise ValueError(f"annotator traces differ in length: {sorted(lengths)}")
    pair_cccs = [ccc(a, b) for a, b in itertools.combinations(values, 2)]
    return float(np.mean(pair_cccs))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_ranksum_p(u: float, n_a: int, n_b: int) -> float:
    """Two-sided p by enumerating all rank assignments (no ties)."""
    n = n_a + n_b
    total = math.comb(n, n_a)
    base = n_a * (n_a + 1) / 2.0
    u_lo = min(u, n_a * n_b - u)
    count = 0
    for combo in itertools.combinations(range(1, n + 1), n_a):
        u_c = sum(combo) - base
        if min(u_c, n_a * n_b - u_c) <= u_lo:
            count += 1
    return min(1.0, count / total)


def wilcoxon_rank_sum(a, b) -> tuple[float, float]:
    """Rank-sum test of samples a vs b.

    Returns (W, two-sided p). W is the Mann-Whitney U of a (midranks for
    ties). Exact enumeration when n_a + n_b <= 12 with no ties, otherwise
    normal approximation with continuity and tie correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n_a, n_b = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    w = float(ranks[:n_a].sum() - n_a * (n_a + 1) / 2.0)
    has_ties = np.unique(pooled).size < pooled.size
    if not has_ties and n_a + n_b <= EXACT_RANKSUM_LIMIT:
        return w, _exact_ranksum_p(w, n_a, n_b)
    n = n_a + n_b
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return w, 1.0
    mean_u = n_a * n_b / 2.0
    z = (abs(w - mean_u) - 0.5) / math.sqrt(var)
    z = max(z, 0.0)
    p = math.erfc(z / math.sqrt(2.0))
    return w, min(1.0, p)


@dataclass(frozen=True)
class EvalReport:
    """One system evaluation on one affect dimension and split."""

    dimension: str
    ccc: float
    pcc: float
    sse: float
    n_frames: int

    def __post_init__(self):
        if math.isfinite(self.ccc) and math.isfinite(self.pcc):
            if abs(self.ccc) > abs(self.pcc) + 1e-12:
                raise ValueError(
                    f"|ccc|={abs(self.ccc)} exceeds |pcc|={abs(self.pcc)}"
                )


EVAL_CSV_HEADER = ["system", "dimension", "split", "sse", "ccc", "pcc"]


def write_eval_csv(stream, rows):
    """rows: iterables of (system, dimension, split, EvalReport)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EVAL_CSV_HEADER)
    for system, dimension, split, report in rows:
        writer.writerow(
            [system, dimension, split, repr(report.sse), repr(report.ccc), repr(report.pcc)]
        )


def read_eval_csv(stream):
    reader = csv.reader(stream)
    header = next(reader)
    if header != EVAL_CSV_HEADER:
        raise ValueError(f"unexpected eval csv header: {header}")
    out = []
    for row in reader:
        system, dimension, split, sse_v, ccc_v, pcc_v = row
        out.append((system, dimension, split, float(sse_v), float(ccc_v), float(pcc_v)))
    return out
