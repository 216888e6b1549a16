"""Multi-level db10 discrete wavelet transform of windowed pupil signals.

Daubechies orthonormal filter with 10 vanishing moments (20 taps), unit
norm, values from the standard table. Boundary handling is periodization;
odd-length intermediates are first extended by repeating the final sample,
so a 200-sample window decomposes through lengths 100, 50, 25, 13, 7, 4, 2
and supports the full 7 levels (floor(log2(200))).

Batch entry points operate on (n_windows, width) matrices; the accumulation
order is fixed per filter tap, so results are bit-identical whether windows
are processed one at a time or all at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CatalogError
from .winstats import (
    central_moments,
    kurtosis_rows,
    quantile_rows,
    rms_rows,
    skewness_rows,
    zcr_rows,
)

DB10_LO = (
    2.66700579005555577e-02,
    1.88176800077691525e-01,
    5.27201188931725628e-01,
    6.88459039453603538e-01,
    2.81172343660577362e-01,
    -2.49846424327315519e-01,
    -1.95946274377377022e-01,
    1.27369340335793391e-01,
    9.30573646035723900e-02,
    -7.13941471663971233e-02,
    -2.94575368218758168e-02,
    3.32126740593410227e-02,
    3.60655356695616883e-03,
    -1.07331754833305797e-02,
    1.39535174705290215e-03,
    1.99240529518505700e-03,
    -6.85856694959711944e-04,
    -1.16466855129285530e-04,
    9.35886703200696326e-05,
    -1.32642028945212460e-05,
)

DB10_HI = tuple((-1.0) ** j * DB10_LO[len(DB10_LO) - 1 - j] for j in range(len(DB10_LO)))

FILTER_LEN = len(DB10_LO)
DEFAULT_LEVELS = 7

WAVELET_STATS = (
    "min", "max", "median", "q1", "q3", "skew", "kurt",
    "sd", "iqr12", "iqr23", "iqr13", "rms", "zcr",
)
WAVELET_BLOCK_SIZE = 173


@dataclass(frozen=True)
class WaveletDecomposition:
    """Per-level detail and approximation coefficients, levels 1..L."""

    detail: tuple
    approx: tuple

    @property
    def levels(self) -> int:
        return len(self.detail)

    def __post_init__(self):
        if len(self.detail) != len(self.approx):
            raise ValueError("detail/approx level counts differ")
        lengths = [a.shape[-1] for a in self.approx]
        if any(b > a for a, b in zip(lengths, lengths[1:])):
            raise ValueError(f"level lengths must be non-increasing: {lengths}")


def max_levels(length: int) -> int:
    return int(math.floor(math.log2(length))) if length >= 2 else 0


def _analysis_step(rows: np.ndarray):
    """One periodized filter-bank step on (m, n) rows; pads odd n."""
    if rows.shape[1] % 2 == 1:
        rows = np.concatenate([rows, rows[:, -1:]], axis=1)
    n = rows.shape[1]
    half = n // 2
    approx = np.zeros((rows.shape[0], half))
    detail = np.zeros((rows.shape[0], half))
    base = 2 * np.arange(half) + 1
    for j in range(FILTER_LEN):
        cols = rows[:, (base - j) % n]
        approx += DB10_LO[j] * cols
        detail += DB10_HI[j] * cols
    return approx, detail


def dwt_db10_batch(signals, levels: int = DEFAULT_LEVELS) -> WaveletDecomposition:
    """Decompose each row of (n_windows, width) to the requested depth."""
    rows = np.asarray(signals, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected 2-D batch, got shape {rows.shape}")
    width = rows.shape[1]
    if width < 2:
        raise ValueError("signal must have at least 2 samples")
    if not 1 <= levels <= max_levels(width):
        raise ValueError(
            f"levels={levels} out of range [1, {max_levels(width)}] for length {width}"
        )
    details, approxes = [], []
    current = rows
    for _ in range(levels):
        current, det = _analysis_step(current)
        approxes.append(current)
        details.append(det)
    return WaveletDecomposition(detail=tuple(details), approx=tuple(approxes))


def dwt_db10(signal, levels: int = DEFAULT_LEVELS) -> WaveletDecomposition:
    """Decompose a single 1-D signal (see dwt_db10_batch)."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ValueError(f"expected 1-D signal, got shape {signal.shape}")
    batch = dwt_db10_batch(signal[None, :], levels)
    return WaveletDecomposition(
        detail=tuple(d[0] for d in batch.detail),
        approx=tuple(a[0] for a in batch.approx),
    )


def idwt_db10(approx, detail) -> np.ndarray:
    """Invert one analysis step (even-length periodized signals only)."""
    approx = np.atleast_2d(np.asarray(approx, dtype=np.float64))
    detail = np.atleast_2d(np.asarray(detail, dtype=np.float64))
    if approx.shape != detail.shape:
        raise ValueError(f"length mismatch: {approx.shape} vs {detail.shape}")
    half = approx.shape[1]
    n = 2 * half
    out = np.zeros((approx.shape[0], n))
    base = 2 * np.arange(half) + 1
    for j in range(FILTER_LEN):
        cols = (base - j) % n
        out[:, cols] += DB10_LO[j] * approx + DB10_HI[j] * detail
    return out[0] if out.shape[0] == 1 else out


def wavelet_block_names(prefix: str = "wavelet") -> list:
    """Catalog names for the 173-value block, in emission order."""
    names = []
    for level in range(1, DEFAULT_LEVELS + 1):
        for stat in WAVELET_STATS:
            if stat == "kurt" and level == DEFAULT_LEVELS:
                continue
            names.append(f"{prefix}.detail.l{level}.{stat}")
    for level in range(1, DEFAULT_LEVELS + 1):
        for stat in WAVELET_STATS:
            if stat == "zcr":
                continue
            if stat == "kurt" and level == DEFAULT_LEVELS:
                continue
            names.append(f"{prefix}.approx.l{level}.{stat}")
    assert len(names) == WAVELET_BLOCK_SIZE
    return names


def _level_stats(rows: np.ndarray, include_kurt: bool, include_zcr: bool) -> list:
    sorted_rows = np.sort(rows, axis=1)
    _, m2, m3, m4 = central_moments(rows)
    q1 = quantile_rows(sorted_rows, 0.25)
    q2 = quantile_rows(sorted_rows, 0.5)
    q3 = quantile_rows(sorted_rows, 0.75)
    cols = [
        sorted_rows[:, 0],
        sorted_rows[:, -1],
        q2,
        q1,
        q3,
        skewness_rows(rows, m2, m3),
    ]
    if include_kurt:
        cols.append(kurtosis_rows(rows, m2, m4))
    cols.extend([np.sqrt(m2), q2 - q1, q3 - q2, q3 - q1, rms_rows(rows)])
    if include_zcr:
        cols.append(zcr_rows(rows, m2))
    return cols


def wavelet_feature_block_batch(decomp: WaveletDecomposition):
    """(names, (n_windows, 173) matrix) of coefficient statistics.

    Detail levels 1-6 get all 13 stats, detail 7 drops kurtosis,
    approximations drop ZCR, approximation 7 drops kurtosis too.
    """
    if decomp.levels != DEFAULT_LEVELS:
        raise CatalogError(
            f"wavelet block needs {DEFAULT_LEVELS} levels, got {decomp.levels}"
        )
    cols = []
    for level, rows in enumerate(decomp.detail, start=1):
        cols.extend(_level_stats(np.atleast_2d(rows), level != DEFAULT_LEVELS, True))
    for level, rows in enumerate(decomp.approx, start=1):
        cols.extend(_level_stats(np.atleast_2d(rows), level != DEFAULT_LEVELS, False))
    block = np.column_stack(cols)
    assert block.shape[1] == WAVELET_BLOCK_SIZE
    return wavelet_block_names(), block


def wavelet_feature_block(decomp: WaveletDecomposition) -> dict:
    """Named 173-value statistics block for a single decomposition."""
    names, block = wavelet_feature_block_batch(decomp)
    return dict(zip(names, block[0]))


def write_coefficient_csv(decomp: WaveletDecomposition, stream):
    """Debug dump (`level,type,index,value`) for external oracle comparison."""
    stream.write("level,type,index,value\n")
    for level in range(decomp.levels):
        for kind, vectors in (("detail", decomp.detail), ("approx", decomp.approx)):
            for index, value in enumerate(np.atleast_1d(vectors[level])):
                stream.write(f"{level + 1},{kind},{index},{float(value)!r}\n")


def read_coefficient_csv(stream) -> WaveletDecomposition:
    header = stream.readline().strip()
    if header != "level,type,index,value":
        raise ValueError(f"unexpected coefficient dump header: {header}")
    store = {}
    for line in stream:
        if not line.strip():
            continue
        level, kind, index, value = line.strip().split(",")
        store.setdefault((int(level), kind), []).append((int(index), float(value)))
    levels = max(level for level, _ in store)
    detail, approx = [], []
    for level in range(1, levels + 1):
        for kind, dest in (("detail", detail), ("approx", approx)):
            pairs = sorted(store[(level, kind)])
            dest.append(np.array([v for _, v in pairs]))
    return WaveletDecomposition(detail=tuple(detail), approx=tuple(approx))
