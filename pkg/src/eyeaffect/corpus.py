"""Corpus handling: frame/annotation CSV parsing, partitions, synthetic data.

Frame CSVs follow the OpenFace 2.0 layout by default (column names are
remappable); annotation CSVs are `time,<annotator_id>,...` at 25 Hz with
values in [-1, 1]. Partition files are INI sections [train]/[validation]/
[test] listing subject ids one per line.

The synthetic generator exists so the full pipeline can run at desk scale:
it plants a known annotator-style delay between a pupil-driven event signal
and the emitted annotation traces, alongside pure-noise channels, and is
byte-deterministic per seed.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ParseError, RangeError, SequenceError

log = logging.getLogger(__name__)

FRAME_RATE = 25
DIMENSIONS = ("arousal", "valence")
TIMESTAMP_TOL = 1e-9

DEFAULT_COLUMN_MAP = {
    "frame_index": "frame",
    "timestamp": "timestamp",
    "confidence": "confidence",
    "gaze_x": "gaze_angle_x",
    "gaze_y": "gaze_angle_y",
    "blink_intensity": "AU45_r",
    "pupil_diameter": "pupil_diameter_mm",
    "direct_gaze": "direct_gaze",
    "eye_landmarks": "eye_lmk",
}

REQUIRED_FIELDS = (
    "frame_index", "timestamp", "confidence", "gaze_x", "gaze_y", "blink_intensity",
)


@dataclass(frozen=True)
class FrameRecord:
    """One 25 Hz video frame's raw eye measurements."""

    frame_index: int
    timestamp: float
    confidence: float
    gaze_x: float
    gaze_y: float
    blink_intensity: float
    pupil_diameter: float | None = None
    eye_landmarks: tuple | None = None
    direct_gaze: bool | None = None

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"negative frame index {self.frame_index}")
        if abs(self.timestamp - self.frame_index / FRAME_RATE) > TIMESTAMP_TOL:
            raise ValueError(
                f"timestamp {self.timestamp} does not match frame {self.frame_index} at 25 fps"
            )
        if not 0.0 <= self.blink_intensity <= 5.0:
            raise ValueError(f"blink intensity {self.blink_intensity} outside [0, 5]")
        if self.pupil_diameter is not None and not self.pupil_diameter > 0.0:
            raise ValueError(f"pupil diameter {self.pupil_diameter} must be positive")


@dataclass(frozen=True)
class AnnotationTrace:
    """25 Hz ground-truth values in [-1, 1] for one dimension and annotator."""

    dimension: str
    annotator_id: str
    values: np.ndarray

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"unknown dimension {self.dimension!r}")
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.size and (values.min() < -1.0 or values.max() > 1.0):
            raise RangeError(
                f"annotation values outside [-1, 1]: span [{values.min()}, {values.max()}]"
            )

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Partition:
    train: frozenset
    validation: frozenset
    test: frozenset

    def __post_init__(self):
        object.__setattr__(self, "train", frozenset(self.train))
        object.__setattr__(self, "validation", frozenset(self.validation))
        object.__setattr__(self, "test", frozenset(self.test))
        overlaps = (
            (self.train & self.validation)
            | (self.train & self.test)
            | (self.validation & self.test)
        )
        if overlaps:
            raise ValueError(f"partition sets overlap: {sorted(overlaps)}")

    @property
    def all_subjects(self) -> frozenset:
        return self.train | self.validation | self.test

    def check_covers(self, subject_ids):
        missing = set(subject_ids) - self.all_subjects
        if missing:
            raise ValueError(f"subjects not in any partition: {sorted(missing)}")


def default_partition() -> Partition:
    """RECOLA subject split used throughout the experiments."""
    return Partition(
        train=frozenset(["P16", "P17", "P19", "P21", "P23", "P26", "P30", "P65"]),
        validation=frozenset(["P25", "P28", "P34", "P37", "P41", "P48", "P56", "P58"]),
        test=frozenset(["P39", "P42", "P43", "P45", "P46", "P62", "P64"]),
    )


def _text(stream):
    if isinstance(stream, (bytes, bytearray)):
        return io.StringIO(stream.decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if hasattr(stream, "read"):
        data = stream.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data)
    raise TypeError(f"cannot read from {type(stream)!r}")


def _parse_float(cell, row_num, column):
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"malformed numeric cell {cell!r}", row=row_num, column=column) from None


def _parse_bool(cell, row_num, column):
    cell = cell.strip()
    if cell in ("1", "1.0", "true", "True"):
        return True
    if cell in ("0", "0.0", "false", "False"):
        return False
    raise ParseError(f"malformed boolean cell {cell!r}", row=row_num, column=column)


def parse_frames(csv_stream, column_map=None) -> list:
    """Parse a frame-descriptor CSV into FrameRecords.

    column_map overrides DEFAULT_COLUMN_MAP entries; mapping a required
    field to a column missing from the header is an error, while absent
    optional columns simply leave those fields unset. Frame numbering may
    be 0- or 1-based (1-based input is shifted down to start at 0).
    """
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        unknown = set(column_map) - set(cmap)
        if unknown:
            raise ValueError(f"unknown column_map fields: {sorted(unknown)}")
        cmap.update(column_map)
    reader = csv.reader(_text(csv_stream))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("frame CSV has no header row") from None
    col_idx = {name: i for i, name in enumerate(header)}
    for fld in REQUIRED_FIELDS:
        if cmap[fld] not in col_idx:
            raise FormatError(f"required column {cmap[fld]!r} missing from header")
    if column_map:
        for fld, col in column_map.items():
            if fld != "eye_landmarks" and col not in col_idx:
                raise FormatError(f"mapped column {col!r} missing from header")
    has_pupil = cmap["pupil_diameter"] in col_idx
    has_direct = cmap["direct_gaze"] in col_idx
    lmk_prefix = cmap["eye_landmarks"]
    lmk_count = 0
    while f"{lmk_prefix}_X_{lmk_count}" in col_idx:
        lmk_count += 1
    lmk_cols = None
    if lmk_count:
        lmk_cols = [
            tuple(col_idx[f"{lmk_prefix}_{axis}_{i}"] for axis in ("X", "Y", "Z"))
            for i in range(lmk_count)
        ]

    records = []
    frame_base = None
    prev_index = None
    for row_num, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        raw_index = _parse_float(row[col_idx[cmap["frame_index"]]], row_num, cmap["frame_index"])
        if raw_index != int(raw_index):
            raise ParseError(
                f"non-integer frame index {raw_index}", row=row_num, column=cmap["frame_index"]
            )
        raw_index = int(raw_index)
        if frame_base is None:
            frame_base = raw_index if raw_index in (0, 1) else 0
        index = raw_index - frame_base
        if prev_index is not None and index <= prev_index:
            raise SequenceError(
                f"frame index {raw_index} at row {row_num} not ascending"
            )
        prev_index = index
        kwargs = {
            "frame_index": index,
            "timestamp": _parse_float(row[col_idx[cmap["timestamp"]]], row_num, cmap["timestamp"]),
            "confidence": _parse_float(row[col_idx[cmap["confidence"]]], row_num, cmap["confidence"]),
            "gaze_x": _parse_float(row[col_idx[cmap["gaze_x"]]], row_num, cmap["gaze_x"]),
            "gaze_y": _parse_float(row[col_idx[cmap["gaze_y"]]], row_num, cmap["gaze_y"]),
            "blink_intensity": _parse_float(
                row[col_idx[cmap["blink_intensity"]]], row_num, cmap["blink_intensity"]
            ),
        }
        if has_pupil and row[col_idx[cmap["pupil_diameter"]]].strip():
            kwargs["pupil_diameter"] = _parse_float(
                row[col_idx[cmap["pupil_diameter"]]], row_num, cmap["pupil_diameter"]
            )
        if has_direct and row[col_idx[cmap["direct_gaze"]]].strip():
            kwargs["direct_gaze"] = _parse_bool(
                row[col_idx[cmap["direct_gaze"]]], row_num, cmap["direct_gaze"]
            )
        if lmk_cols:
            kwargs["eye_landmarks"] = tuple(
                tuple(_parse_float(row[c], row_num, f"{lmk_prefix}_{i}") for c in cols)
                for i, cols in enumerate(lmk_cols)
            )
        try:
            records.append(FrameRecord(**kwargs))
        except ValueError as exc:
            raise ParseError(str(exc), row=row_num) from None
    return records


def serialize_frames(records, stream, column_map=None):
    """Write FrameRecords back to CSV (inverse of parse_frames)."""
    cmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        cmap.update(column_map)
    has_pupil = any(r.pupil_diameter is not None for r in records)
    has_direct = any(r.direct_gaze is not None for r in records)
    lmk_count = max((len(r.eye_landmarks) for r in records if r.eye_landmarks), default=0)
    header = [cmap[f] for f in REQUIRED_FIELDS]
    if has_pupil:
        header.append(cmap["pupil_diameter"])
    if has_direct:
        header.append(cmap["direct_gaze"])
    for i in range(lmk_count):
        header.extend(f"{cmap['eye_landmarks']}_{axis}_{i}" for axis in ("X", "Y", "Z"))
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for r in records:
        row = [
            r.frame_index,
            repr(r.timestamp),
            repr(r.confidence),
            repr(r.gaze_x),
            repr(r.gaze_y),
            repr(r.blink_intensity),
        ]
        if has_pupil:
            row.append("" if r.pupil_diameter is None else repr(r.pupil_diameter))
        if has_direct:
            row.append("" if r.direct_gaze is None else int(r.direct_gaze))
        if lmk_count:
            pts = r.eye_landmarks or ()
            for i in range(lmk_count):
                if i < len(pts):
                    row.extend(repr(c) for c in pts[i])
                else:
                    row.extend(["", "", ""])
        writer.writerow(row)


def parse_annotations(csv_stream, dimension="arousal") -> list:
    """Parse `time,<annotator_id>,...` CSV into one trace per annotator."""
    reader = csv.reader(_text(csv_stream))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("annotation CSV has no header row") from None
    if not header or header[0] != "time":
        raise FormatError(f"annotation CSV must start with a 'time' column, got {header[:1]}")
    annotators = header[1:]
    if not annotators:
        raise FormatError("annotation CSV has no annotator columns")
    columns = [[] for _ in annotators]
    for row_num, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise FormatError(f"row {row_num} has {len(row)} cells, expected {len(header)}")
        t = _parse_float(row[0], row_num, "time")
        expected_t = (row_num - 1) / FRAME_RATE
        if abs(t - expected_t) > TIMESTAMP_TOL:
            raise FormatError(
                f"time {t} at row {row_num} is not {expected_t} (25 values/second required)"
            )
        for j, cell in enumerate(row[1:]):
            v = _parse_float(cell, row_num, annotators[j])
            if not -1.0 <= v <= 1.0:
                raise RangeError(
                    f"annotation value {v} outside [-1, 1] (row {row_num}, column {annotators[j]!r})"
                )
            columns[j].append(v)
    return [
        AnnotationTrace(dimension=dimension, annotator_id=a, values=np.array(col))
        for a, col in zip(annotators, columns)
    ]


def write_annotations(traces, stream):
    """Write aligned traces of one dimension as `time,<annotator>,...` CSV."""
    if not traces:
        raise ValueError("no traces to write")
    n = len(traces[0])
    if any(len(t) != n for t in traces):
        raise ValueError("traces differ in length")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["time"] + [t.annotator_id for t in traces])
    for i in range(n):
        writer.writerow([repr(i / FRAME_RATE)] + [repr(float(t.values[i])) for t in traces])


def read_partition(stream) -> Partition:
    parser = configparser.ConfigParser(allow_no_value=True)
    parser.optionxform = str
    parser.read_file(_text(stream))
    sets = {}
    for section in ("train", "validation", "test"):
        if not parser.has_section(section):
            raise FormatError(f"partition file missing [{section}] section")
        sets[section] = frozenset(parser.options(section))
    return Partition(train=sets["train"], validation=sets["validation"], test=sets["test"])


def write_partition(partition: Partition, stream):
    for section in ("train", "validation", "test"):
        stream.write(f"[{section}]\n")
        for sid in sorted(getattr(partition, section)):
            stream.write(f"{sid}\n")
        stream.write("\n")


# Synthetic corpus shape constants. The pupil channel carries sparse smooth
# dilation events whose delayed, rectified amplitude drives the annotation
# trace; gaze and blink channels are pure noise.
SYNTH = {
    "pupil_base_mm": 3.5,
    "bump_width_s": 1.2,
    "bump_height_lo": 0.45,
    "bump_height_hi": 1.1,
    "bump_gap_mean_s": 6.0,
    "bump_gap_min_s": 2.4,
    "pupil_jitter_mm": 0.002,
    "label_gain": 2.2,
    "label_offset": -0.25,
    "label_threshold_mm": 0.06,
    "label_noise_sd": 0.06,
    "annotator_noise_sd": 0.03,
    "n_annotators": 3,
    "gaze_noise_rad": 0.15,
    "blink_noise": 0.45,
    "direct_gaze_rate": 0.3,
}

MAX_SHIFT_S = 4.4
MIN_DURATION_S = 16.0
_PAD_FRAMES = 320  # covers max lag (110 frames) plus one full window


def _bump_train(rng, n_frames, rate=FRAME_RATE):
    """Sparse raised-cosine bumps with random heights; returns the envelope."""
    width = int(round(SYNTH["bump_width_s"] * rate))
    envelope = np.zeros(n_frames)
    t = SYNTH["bump_gap_min_s"] + rng.exponential(SYNTH["bump_gap_mean_s"])
    shape = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(width) / width))
    while t * rate < n_frames:
        start = int(round(t * rate))
        height = rng.uniform(SYNTH["bump_height_lo"], SYNTH["bump_height_hi"])
        stop = min(start + width, n_frames)
        envelope[start:stop] = np.maximum(envelope[start:stop], height * shape[: stop - start])
        t += SYNTH["bump_gap_min_s"] + rng.exponential(SYNTH["bump_gap_mean_s"])
    return envelope


def _label_from_pupil(pupil_excess, dimension):
    lifted = np.maximum(0.0, pupil_excess - SYNTH["label_threshold_mm"])
    response = np.tanh(SYNTH["label_gain"] * lifted)
    if dimension == "valence":
        return 0.25 - 0.9 * response
    return response + SYNTH["label_offset"]


def synth_corpus(seed: int, n_subjects: int, duration_s: float, lag_s: float):
    """Deterministic synthetic corpus with a planted annotator delay.

    Returns (frames_by_subject, traces_by_subject). The annotation for each
    dimension is a smooth bounded function of the pupil channel delayed by
    lag_s, plus white noise, replicated across annotators with small
    independent jitter. Gaze x/y, blink intensity and direct gaze are pure
    noise channels.
    """
    if duration_s < MIN_DURATION_S:
        raise ValueError(f"duration must be >= {MIN_DURATION_S} s (two windows)")
    if not 0.0 <= lag_s <= MAX_SHIFT_S:
        raise ValueError(f"lag {lag_s} outside the sweep range [0, {MAX_SHIFT_S}]")
    lag_frames = int(round(lag_s * FRAME_RATE))
    if abs(lag_s * FRAME_RATE - lag_frames) > 1e-9:
        raise ValueError(f"lag {lag_s} is not an integer number of frames at 25 fps")
    n_frames = int(round(duration_s * FRAME_RATE))
    frames_by_subject = {}
    traces_by_subject = {}
    for s in range(n_subjects):
        sid = f"S{s:02d}"
        ext = n_frames + _PAD_FRAMES
        driver_rng = np.random.default_rng([seed, s, 0])
        envelope = _bump_train(driver_rng, ext)
        pupil = (
            SYNTH["pupil_base_mm"]
            + envelope
            + driver_rng.normal(0.0, SYNTH["pupil_jitter_mm"], ext)
        )
        delayed = envelope[_PAD_FRAMES - lag_frames : _PAD_FRAMES - lag_frames + n_frames]
        traces = []
        for dim_idx, dimension in enumerate(DIMENSIONS):
            rng = np.random.default_rng([seed, s, 1 + dim_idx])
            shared = _label_from_pupil(delayed, dimension)
            shared = shared + rng.normal(0.0, SYNTH["label_noise_sd"], n_frames)
            for a in range(SYNTH["n_annotators"]):
                jitter = rng.normal(0.0, SYNTH["annotator_noise_sd"], n_frames)
                traces.append(
                    AnnotationTrace(
                        dimension=dimension,
                        annotator_id=f"A{a + 1}",
                        values=np.clip(shared + jitter, -1.0, 1.0),
                    )
                )
        rng = np.random.default_rng([seed, s, 99])
        gaze_x = rng.normal(0.0, SYNTH["gaze_noise_rad"], n_frames)
        gaze_y = rng.normal(0.0, SYNTH["gaze_noise_rad"], n_frames)
        blink = np.clip(np.abs(rng.normal(0.0, SYNTH["blink_noise"], n_frames)), 0.0, 5.0)
        direct = rng.random(n_frames) < SYNTH["direct_gaze_rate"]
        pupil_out = pupil[_PAD_FRAMES:]
        frames = [
            FrameRecord(
                frame_index=i,
                timestamp=i / FRAME_RATE,
                confidence=0.98,
                gaze_x=float(gaze_x[i]),
                gaze_y=float(gaze_y[i]),
                blink_intensity=float(blink[i]),
                pupil_diameter=float(pupil_out[i]),
                direct_gaze=bool(direct[i]),
            )
            for i in range(n_frames)
        ]
        frames_by_subject[sid] = frames
        traces_by_subject[sid] = traces
    return frames_by_subject, traces_by_subject


def synth_partition(subject_ids, n_train: int, n_val: int) -> Partition:
    ids = sorted(subject_ids)
    if n_train + n_val > len(ids):
        raise ValueError("partition sizes exceed subject count")
    return Partition(
        train=frozenset(ids[:n_train]),
        validation=frozenset(ids[n_train : n_train + n_val]),
        test=frozenset(ids[n_train + n_val :]),
    )
