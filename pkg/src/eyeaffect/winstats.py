"""Row-wise statistics over window matrices.

Every helper takes a (n_windows, width) float array and returns one value
per row. Quantiles interpolate linearly between order statistics; moments
are population moments (divide by n). Rows with variance below VAR_EPS get
skewness, kurtosis and ZCR forced to 0.
"""

from __future__ import annotations

import numpy as np

VAR_EPS = 1e-12


def _rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] == 0:
        raise ValueError(f"expected non-empty rows, got shape {a.shape}")
    return a


def quantile_rows(sorted_rows: np.ndarray, q: float) -> np.ndarray:
    """Linear-interpolation quantile of pre-sorted rows."""
    n = sorted_rows.shape[1]
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return sorted_rows[:, lo] * (1.0 - frac) + sorted_rows[:, hi] * frac


def central_moments(rows: np.ndarray):
    mean = rows.mean(axis=1)
    centered = rows - mean[:, None]
    m2 = (centered**2).mean(axis=1)
    m3 = (centered**3).mean(axis=1)
    m4 = (centered**4).mean(axis=1)
    return mean, m2, m3, m4


def skewness_rows(rows: np.ndarray, m2=None, m3=None) -> np.ndarray:
    if rows.shape[1] < 3:
        return np.zeros(rows.shape[0])
    if m2 is None:
        _, m2, m3, _ = central_moments(rows)
    out = np.zeros(rows.shape[0])
    ok = m2 >= VAR_EPS
    out[ok] = m3[ok] / m2[ok] ** 1.5
    return out


def kurtosis_rows(rows: np.ndarray, m2=None, m4=None) -> np.ndarray:
    if rows.shape[1] < 4:
        return np.zeros(rows.shape[0])
    if m2 is None:
        _, m2, _, m4 = central_moments(rows)
    out = np.zeros(rows.shape[0])
    ok = m2 >= VAR_EPS
    out[ok] = m4[ok] / m2[ok] ** 2
    return out


def rms_rows(rows: np.ndarray) -> np.ndarray:
    return np.sqrt((rows**2).mean(axis=1))


def zcr_rows(rows: np.ndarray, m2=None) -> np.ndarray:
    """Sign changes of the mean-removed row divided by (n - 1)."""
    n = rows.shape[1]
    if n < 2:
        return np.zeros(rows.shape[0])
    if m2 is None:
        _, m2, _, _ = central_moments(rows)
    centered = rows - rows.mean(axis=1)[:, None]
    changes = (centered[:, :-1] * centered[:, 1:] < 0.0).sum(axis=1)
    out = changes / (n - 1)
    out[m2 < VAR_EPS] = 0.0
    return out


def linreg_rows(rows: np.ndarray, rate: float = 25.0):
    """Least-squares (slope, intercept) of row values against time i/rate."""
    n = rows.shape[1]
    t = np.arange(n, dtype=np.float64) / rate
    t_mean = t.mean()
    t_var = ((t - t_mean) ** 2).mean()
    v_mean = rows.mean(axis=1)
    if n < 2 or t_var == 0.0:
        return np.zeros(rows.shape[0]), v_mean
    cov = ((rows - v_mean[:, None]) * (t - t_mean)).mean(axis=1)
    slope = cov / t_var
    intercept = v_mean - slope * t_mean
    return slope, intercept
