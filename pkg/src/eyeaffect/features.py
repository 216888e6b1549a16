"""Windowed feature extraction: the canonical 292-column eye feature set.

An 8 s window (200 frames at 25 fps) slides at 1-frame stride; each full
window yields 26 event features from the binary channels, 93 descriptive
statistics from the numeric channels and 173 wavelet statistics from the
pupil-diameter window. Feature row t is aligned to the window ending at
frame t, so the first row sits at frame 199.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from . import wavelet as wv
from . import winstats as ws
from .errors import AlignmentError, CatalogError, InsufficientDataError
from .lld import DescriptorSeries

WINDOW = 200
RATE = 25

NUMERIC_STATS = (
    "min", "max", "mean", "median", "q1", "q3", "skew", "kurt",
    "sd", "iqr12", "iqr23", "iqr13", "slope", "intercept",
)
BLINK_STATS = ("max", "mean", "median", "q3", "sd", "iqr12", "iqr23", "slope", "intercept")
EVENT_STATS_SHORT = ("ratio", "mean_s", "max_s", "total_s")
EVENT_STATS_NO_MIN = ("ratio", "median_s", "mean_s", "max_s")
EVENT_STATS_FULL = ("ratio", "min_s", "median_s", "mean_s", "max_s")

GROUPS = ("gaze", "pupil", "closure")
KINDS = ("stat", "event", "wavelet")


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    group: str
    kind: str
    channel: str


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise CatalogError("duplicate feature names in catalog")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list:
        return [e.name for e in self.entries]

    def group_count(self, group: str) -> int:
        return sum(1 for e in self.entries if e.group == group)

    def kind_count(self, kind: str) -> int:
        return sum(1 for e in self.entries if e.kind == kind)

    def mask_for_group(self, group: str) -> np.ndarray:
        return np.array([e.group == group for e in self.entries])

    def mask_for_channel(self, channel: str) -> np.ndarray:
        return np.array([e.channel == channel for e in self.entries])

    def digest(self) -> str:
        payload = "\n".join(f"{e.name},{e.group},{e.kind}" for e in self.entries)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def subset(self, mask) -> "FeatureCatalog":
        mask = np.asarray(mask, dtype=bool)
        if mask.size != len(self.entries):
            raise CatalogError(f"mask width {mask.size} != catalog size {len(self.entries)}")
        return FeatureCatalog(tuple(e for e, m in zip(self.entries, mask) if m))


def _event_entries(channel, group, label, stats):
    return [CatalogEntry(f"{group}.{label}.{s}", group, "event", channel) for s in stats]


def build_catalog() -> FeatureCatalog:
    """The canonical 292-entry catalog, in emission order."""
    entries = []
    entries += _event_entries("direct_gaze", "gaze", "direct", EVENT_STATS_SHORT)
    entries += _event_entries("pupil_dilation", "pupil", "dilation", EVENT_STATS_SHORT)
    entries += _event_entries("pupil_constriction", "pupil", "constriction", EVENT_STATS_SHORT)
    entries += _event_entries("gaze_approach", "gaze", "approach", EVENT_STATS_NO_MIN)
    entries += _event_entries("eyes_fixated", "gaze", "fixated", EVENT_STATS_FULL)
    entries += _event_entries("eye_closure", "closure", "closed", EVENT_STATS_FULL)
    for channel, group, label in (
        ("pupil_diam", "pupil", "diam"),
        ("d_pupil_diam", "pupil", "ddiam"),
        ("gaze_x", "gaze", "x"),
        ("gaze_y", "gaze", "y"),
        ("d_gaze_x", "gaze", "dx"),
        ("d_gaze_y", "gaze", "dy"),
    ):
        entries += [
            CatalogEntry(f"{group}.{label}.{s}", group, "stat", channel)
            for s in NUMERIC_STATS
        ]
    entries += [
        CatalogEntry(f"closure.blink_intensity.{s}", "closure", "stat", "blink_intensity")
        for s in BLINK_STATS
    ]
    entries += [
        CatalogEntry(f"pupil.{name}", "pupil", "wavelet", "pupil_diam")
        for name in wv.wavelet_block_names()
    ]
    catalog = FeatureCatalog(tuple(entries))
    assert len(catalog) == 292
    return catalog


def validate_canonical(catalog: FeatureCatalog):
    """Assert the canonical catalog counts (292 = 69 + 209 + 14, etc.)."""
    checks = {
        "total": (len(catalog), 292),
        "gaze": (catalog.group_count("gaze"), 69),
        "pupil": (catalog.group_count("pupil"), 209),
        "closure": (catalog.group_count("closure"), 14),
        "event": (catalog.kind_count("event"), 26),
        "stat": (catalog.kind_count("stat"), 93),
        "wavelet": (catalog.kind_count("wavelet"), 173),
    }
    for label, (got, want) in checks.items():
        if got != want:
            raise CatalogError(f"catalog {label} count {got} != {want}")


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-frame feature rows plus the catalog naming every column."""

    values: np.ndarray
    catalog: FeatureCatalog
    frame_offset: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.catalog):
            raise CatalogError(
                f"matrix width {self.values.shape} != catalog size {len(self.catalog)}"
            )
        if not np.all(np.isfinite(self.values)):
            raise CatalogError("feature matrix contains NaN or Inf")

    def __len__(self):
        return self.values.shape[0]

    @property
    def frames(self) -> np.ndarray:
        return self.frame_offset + np.arange(len(self))


def window_slices(series_length: int, window: int = WINDOW, stride: int = 1):
    """(start, end) inclusive index pairs of every full window."""
    if series_length < window:
        raise InsufficientDataError(
            f"series length {series_length} shorter than window {window}"
        )
    return [(t - window + 1, t) for t in range(window - 1, series_length, stride)]


def _numeric_stat_columns(rows: np.ndarray) -> dict:
    sorted_rows = np.sort(rows, axis=1)
    mean, m2, m3, m4 = ws.central_moments(rows)
    q1 = ws.quantile_rows(sorted_rows, 0.25)
    q2 = ws.quantile_rows(sorted_rows, 0.5)
    q3 = ws.quantile_rows(sorted_rows, 0.75)
    slope, intercept = ws.linreg_rows(rows, RATE)
    return {
        "min": sorted_rows[:, 0],
        "max": sorted_rows[:, -1],
        "mean": mean,
        "median": q2,
        "q1": q1,
        "q3": q3,
        "skew": ws.skewness_rows(rows, m2, m3),
        "kurt": ws.kurtosis_rows(rows, m2, m4),
        "sd": np.sqrt(m2),
        "iqr12": q2 - q1,
        "iqr23": q3 - q2,
        "iqr13": q3 - q1,
        "slope": slope,
        "intercept": intercept,
    }


def _run_durations(flags: np.ndarray) -> np.ndarray:
    """Lengths in seconds of contiguous true runs (edge runs count whole)."""
    if not flags.any():
        return np.empty(0)
    padded = np.concatenate([[False], flags, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, stops = edges[::2], edges[1::2]
    return (stops - starts) / RATE


def _event_stat_values(flags: np.ndarray) -> dict:
    runs = _run_durations(flags)
    if runs.size:
        stats = {
            "min_s": float(runs.min()),
            "median_s": float(np.median(runs)),
            "mean_s": float(runs.mean()),
            "max_s": float(runs.max()),
            "total_s": float(runs.sum()),
        }
    else:
        stats = {"min_s": 0.0, "median_s": 0.0, "mean_s": 0.0, "max_s": 0.0, "total_s": 0.0}
    stats["ratio"] = float(flags.mean())
    return stats


def descriptive_stats(values, stat_set=NUMERIC_STATS) -> dict:
    """Named descriptive statistics of one window (length >= 2)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("descriptive_stats expects a non-empty 1-D window")
    if values.size < 2:
        raise ValueError("window length must be >= 2")
    unknown = set(stat_set) - set(NUMERIC_STATS)
    if unknown:
        raise ValueError(f"unknown stats: {sorted(unknown)}")
    cols = _numeric_stat_columns(values[None, :])
    return {name: float(cols[name][0]) for name in stat_set}


def event_stats(flags, stat_set=EVENT_STATS_FULL) -> dict:
    """Named event statistics of one boolean window (length >= 1)."""
    flags = np.asarray(flags, dtype=bool)
    if flags.ndim != 1 or flags.size == 0:
        raise ValueError("event_stats expects a non-empty 1-D boolean window")
    unknown = set(stat_set) - {"ratio", "min_s", "median_s", "mean_s", "max_s", "total_s"}
    if unknown:
        raise ValueError(f"unknown event stats: {sorted(unknown)}")
    values = _event_stat_values(flags)
    return {name: values[name] for name in stat_set}


def _windows(values: np.ndarray, window: int) -> np.ndarray:
    return np.lib.stride_tricks.sliding_window_view(values, window)


def _extract_rows(series: DescriptorSeries, window: int) -> np.ndarray:
    """The non-wavelet 119 columns for every full window, in catalog order."""
    n_win = len(series) - window + 1
    blocks = []
    for channel, stats in (
        ("direct_gaze", EVENT_STATS_SHORT),
        ("pupil_dilation", EVENT_STATS_SHORT),
        ("pupil_constriction", EVENT_STATS_SHORT),
        ("gaze_approach", EVENT_STATS_NO_MIN),
        ("eyes_fixated", EVENT_STATS_FULL),
        ("eye_closure", EVENT_STATS_FULL),
    ):
        flags = series.binary(channel)
        block = np.empty((n_win, len(stats)))
        for i in range(n_win):
            values = _event_stat_values(flags[i : i + window])
            for j, s in enumerate(stats):
                block[i, j] = values[s]
        blocks.append(block)
    for channel, stats in (
        ("pupil_diam", NUMERIC_STATS),
        ("d_pupil_diam", NUMERIC_STATS),
        ("gaze_x", NUMERIC_STATS),
        ("gaze_y", NUMERIC_STATS),
        ("d_gaze_x", NUMERIC_STATS),
        ("d_gaze_y", NUMERIC_STATS),
        ("blink_intensity", BLINK_STATS),
    ):
        cols = _numeric_stat_columns(_windows(series.numeric(channel), window))
        blocks.append(np.column_stack([cols[s] for s in stats]))
    return np.concatenate(blocks, axis=1)


def extract_features(series: DescriptorSeries, window: int = WINDOW) -> FeatureMatrix:
    """Slide the window over a fully derived series and emit all rows."""
    if not series.has_binary:
        raise ValueError("series is missing binary channels; run derive_binary_llds")
    if len(series) < window:
        raise InsufficientDataError(
            f"series length {len(series)} shorter than window {window}"
        )
    catalog = build_catalog()
    base = _extract_rows(series, window)
    decomp = wv.dwt_db10_batch(_windows(series.numeric("pupil_diam"), window))
    _, wavelet_block = wv.wavelet_feature_block_batch(decomp)
    values = np.concatenate([base, wavelet_block], axis=1)
    return FeatureMatrix(values=values, catalog=catalog, frame_offset=window - 1)


def assemble_feature_vector(window_series: DescriptorSeries, wavelet_block):
    """One 292-value row from a single full window plus its wavelet block."""
    if len(window_series) != WINDOW:
        raise ValueError(f"window must be exactly {WINDOW} frames, got {len(window_series)}")
    if not window_series.has_binary:
        raise ValueError("window series is missing binary channels")
    wavelet_block = np.asarray(wavelet_block, dtype=np.float64)
    if wavelet_block.shape != (wv.WAVELET_BLOCK_SIZE,):
        raise CatalogError(
            f"wavelet block shape {wavelet_block.shape} != ({wv.WAVELET_BLOCK_SIZE},)"
        )
    catalog = build_catalog()
    base = _extract_rows(window_series, WINDOW)
    vector = np.concatenate([base[0], wavelet_block])
    if vector.size != len(catalog):
        raise CatalogError(f"assembled width {vector.size} != {len(catalog)}")
    return vector, catalog


def write_feature_csv(matrix: FeatureMatrix, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["frame"] + matrix.catalog.names)
    for i, frame in enumerate(matrix.frames):
        writer.writerow([int(frame)] + [repr(float(v)) for v in matrix.values[i]])


def read_feature_csv(stream, catalog: FeatureCatalog | None = None) -> FeatureMatrix:
    reader = csv.reader(stream)
    header = next(reader)
    if not header or header[0] != "frame":
        raise CatalogError("feature CSV must start with a 'frame' column")
    names = header[1:]
    rows, frames = [], []
    for row in reader:
        frames.append(int(row[0]))
        rows.append([float(v) for v in row[1:]])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    if frames and frames != list(range(frames[0], frames[0] + len(frames))):
        raise AlignmentError("feature CSV frames are not contiguous")
    if catalog is not None:
        if names != catalog.names:
            raise CatalogError("feature CSV columns do not match the expected catalog")
    else:
        catalog = FeatureCatalog(
            tuple(CatalogEntry(n, "ext", "ext", "ext") for n in names)
        )
    return FeatureMatrix(
        values=values, catalog=catalog, frame_offset=frames[0] if frames else WINDOW - 1
    )


def fuse(eye: FeatureMatrix, external: FeatureMatrix, alignment: int = 0) -> FeatureMatrix:
    """Early feature fusion: column-concatenate frame-aligned matrices.

    alignment shifts the external matrix's frame numbering before the
    check; external columns are namespaced `ext.<name>`.
    """
    ext_frames = external.frames + alignment
    eye_frames = eye.frames
    if eye_frames.size != ext_frames.size or not np.array_equal(eye_frames, ext_frames):
        eye_span = (int(eye_frames[0]), int(eye_frames[-1])) if eye_frames.size else None
        ext_span = (int(ext_frames[0]), int(ext_frames[-1])) if ext_frames.size else None
        raise AlignmentError(
            f"frame ranges differ after alignment: eye {eye_span} vs external {ext_span}"
        )
    ext_entries = tuple(
        CatalogEntry(f"ext.{e.name}", "ext", "ext", e.channel) for e in external.catalog.entries
    )
    catalog = FeatureCatalog(eye.catalog.entries + ext_entries)
    values = np.concatenate([eye.values, external.values], axis=1)
    return FeatureMatrix(values=values, catalog=catalog, frame_offset=eye.frame_offset)
