"""Feature selection: MI filtering interleaved with label time-shifting.

Mutual information is a plug-in histogram estimate on equal-frequency
(quantile) bins, 32 per variable, in nats; variables with few distinct
values (binary channels in particular) are binned by value identity.
Scores are always computed on the training subjects only.

Label shifting moves annotation values back in time: y'[t] = y[t + k]
frames, after which the same number of trailing feature rows is dropped.

The sweep protocols produce the standard experiment grids:

  before: filter on unshifted labels at {none, 0.1, 0.15, 0.2}  (4 rows)
  during: fix before's best threshold, re-filter at each shift  (23 rows)
  after:  fix the no-filter sweep's best shift, sweep thresholds (4 rows)
  none:   shift sweep without any filtering                     (23 rows)
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .corpus import AnnotationTrace, FRAME_RATE
from .features import FeatureMatrix
from .metrics import ccc as ccc_metric
from .model import ModelConfig, SubjectSequence, predict, train_blstm

log = logging.getLogger(__name__)

DEFAULT_BINS = 32
DEFAULT_THRESHOLDS = (0.1, 0.15, 0.2)
PROTOCOLS = ("before", "during", "after", "none")


def default_shifts() -> tuple:
    """0.0 to 4.4 seconds in 0.2 s steps: 23 shifts."""
    return tuple(round(0.2 * i, 10) for i in range(23))


@dataclass(frozen=True)
class ShiftConfig:
    shifts: tuple = ()
    rate: int = FRAME_RATE

    def __post_init__(self):
        shifts = tuple(self.shifts) if self.shifts else default_shifts()
        object.__setattr__(self, "shifts", shifts)
        for s in shifts:
            frames = s * self.rate
            if abs(frames - round(frames)) > 1e-9:
                raise ValueError(f"shift {s}s is not an integer number of frames")

    def frames(self) -> list:
        return [int(round(s * self.rate)) for s in self.shifts]


def shift_labels(trace: AnnotationTrace, d_s: float):
    """Shift a trace back in time by d_s seconds.

    Returns (shifted_trace, dropped) where dropped is the number of
    trailing feature rows the caller must remove to stay aligned.
    """
    frames = d_s * FRAME_RATE
    k = int(round(frames))
    if abs(frames - k) > 1e-9:
        raise ValueError(f"shift {d_s}s is not an integer number of frames at 25 fps")
    if k < 0:
        raise ValueError("shift must be non-negative")
    if k >= len(trace):
        raise ValueError(f"shift of {k} frames >= trace length {len(trace)}")
    return replace(trace, values=trace.values[k:]), k


def _bin_codes(x: np.ndarray, bins: int):
    """(codes, n_bins) for one variable, or None when constant."""
    distinct = np.unique(x)
    if distinct.size <= 1:
        return None
    if distinct.size <= bins:
        return np.searchsorted(distinct, x), distinct.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.int64)
    ranks[order] = np.arange(x.size)
    return (ranks * bins) // x.size, bins


def mutual_information(x, y, bins: int = DEFAULT_BINS) -> float:
    """Plug-in MI estimate in nats, clamped at 0; constant input gives 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length 1-D arrays, got {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError("empty input")
    cx = _bin_codes(x, bins)
    cy = _bin_codes(y, bins)
    if cx is None or cy is None:
        log.debug("mutual_information: degenerate (constant) variable, returning 0")
        return 0.0
    codes_x, bx = cx
    codes_y, by = cy
    joint = np.bincount(codes_x * by + codes_y, minlength=bx * by).astype(np.float64)
    joint /= x.size
    px = joint.reshape(bx, by).sum(axis=1)
    py = joint.reshape(bx, by).sum(axis=0)
    outer = np.outer(px, py).reshape(-1)
    nz = joint > 0
    mi = float(np.sum(joint[nz] * np.log(joint[nz] / outer[nz])))
    return max(mi, 0.0)


def _label_array(labels) -> np.ndarray:
    if isinstance(labels, AnnotationTrace):
        return labels.values
    return np.asarray(labels, dtype=np.float64)


def mi_filter(matrix, labels, threshold: float, bins: int = DEFAULT_BINS):
    """(retained mask, per-feature MI scores); kept iff score >= threshold."""
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    y = _label_array(labels)
    if values.shape[0] != y.size:
        raise ValueError(f"{values.shape[0]} feature rows vs {y.size} labels")
    scores = np.array([mutual_information(values[:, j], y, bins) for j in range(values.shape[1])])
    mask = scores >= threshold
    if not mask.any():
        log.warning("mi_filter: threshold %.3g removed every feature", threshold)
    return mask, scores


@dataclass(frozen=True)
class SelectionReport:
    """One sweep cell: its filter settings and validation outcome."""

    protocol: str
    threshold: float | None
    shift_s: float
    mi_scores: np.ndarray | None
    retained: np.ndarray | None
    val_ccc: float
    val_sse: float
    n_features: int
    failed: bool = False

    def __post_init__(self):
        if self.retained is not None and self.n_features != int(np.sum(self.retained)):
            raise ValueError("n_features disagrees with retained mask")


def best_report(reports) -> SelectionReport:
    """Highest CCC; ties broken by fewer features, then smaller shift."""
    live = [r for r in reports if not r.failed]
    if not live:
        raise ValueError("every sweep cell failed")
    return min(live, key=lambda r: (-r.val_ccc, r.n_features, r.shift_s))


SWEEP_CSV_HEADER = ["protocol", "threshold", "shift_s", "n_features", "val_sse", "val_ccc"]


def write_sweep_csv(reports, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER)
    for r in reports:
        writer.writerow(
            [
                r.protocol,
                "none" if r.threshold is None else repr(r.threshold),
                repr(r.shift_s),
                r.n_features,
                repr(r.val_sse),
                repr(r.val_ccc),
            ]
        )


def read_sweep_csv(stream) -> list:
    reader = csv.reader(stream)
    header = next(reader)
    if header != SWEEP_CSV_HEADER:
        raise ValueError(f"unexpected sweep csv header: {header}")
    out = []
    for row in reader:
        protocol, threshold, shift_s, n_features, val_sse, val_ccc = row
        out.append(
            SelectionReport(
                protocol=protocol,
                threshold=None if threshold == "none" else float(threshold),
                shift_s=float(shift_s),
                mi_scores=None,
                retained=None,
                val_ccc=float(val_ccc),
                val_sse=float(val_sse),
                n_features=int(n_features),
            )
        )
    return out


def _shift_sequences(sequences, k: int):
    if k == 0:
        return list(sequences)
    out = []
    for seq in sequences:
        if k >= len(seq.targets):
            raise ValueError(f"shift of {k} frames >= sequence {seq.subject}")
        out.append(
            SubjectSequence(
                subject=seq.subject,
                features=seq.features[: len(seq.targets) - k],
                targets=seq.targets[k:],
            )
        )
    return out


def _run_cell(train, val, protocol, threshold, shift_s, config, bins):
    k = int(round(shift_s * FRAME_RATE))
    train_k = _shift_sequences(train, k)
    val_k = _shift_sequences(val, k)
    if threshold is None:
        mask = np.ones(train_k[0].features.shape[1], dtype=bool)
        scores = None
    else:
        stacked = np.concatenate([s.features for s in train_k])
        labels = np.concatenate([s.targets for s in train_k])
        mask, scores = mi_filter(stacked, labels, threshold, bins)
        if not mask.any():
            return SelectionReport(
                protocol=protocol,
                threshold=threshold,
                shift_s=shift_s,
                mi_scores=scores,
                retained=mask,
                val_ccc=float("nan"),
                val_sse=float("nan"),
                n_features=0,
                failed=True,
            )
    train_m = [replace(s, features=s.features[:, mask]) for s in train_k]
    val_m = [replace(s, features=s.features[:, mask]) for s in val_k]
    model, _ = train_blstm(train_m, val_m, config)
    preds = np.concatenate([predict(model, s.features) for s in val_m])
    truth = np.concatenate([s.targets for s in val_m])
    val_ccc = ccc_metric(preds, truth)
    std = model.standardizer
    val_sse = float(np.mean((std.apply_targets(preds) - std.apply_targets(truth)) ** 2))
    return SelectionReport(
        protocol=protocol,
        threshold=threshold,
        shift_s=shift_s,
        mi_scores=scores,
        retained=mask,
        val_ccc=val_ccc,
        val_sse=val_sse,
        n_features=int(mask.sum()),
    )


_WORKER_STATE = {}


def _init_worker(train, val, config, bins):
    _WORKER_STATE["args"] = (train, val, config, bins)


def _worker_cell(cell):
    protocol, threshold, shift_s = cell
    train, val, config, bins = _WORKER_STATE["args"]
    return _run_cell(train, val, protocol, threshold, shift_s, config, bins)


def _run_cells(train, val, cells, config, bins, n_jobs):
    if n_jobs <= 1 or len(cells) <= 1:
        return [_run_cell(train, val, p, t, s, config, bins) for p, t, s in cells]
    with ProcessPoolExecutor(
        max_workers=n_jobs, initializer=_init_worker, initargs=(train, val, config, bins)
    ) as pool:
        return list(pool.map(_worker_cell, cells))


def sweep_protocol(
    mode: str,
    train,
    val,
    model_config: ModelConfig = ModelConfig(),
    thresholds=DEFAULT_THRESHOLDS,
    shifts: ShiftConfig = ShiftConfig(),
    fixed_threshold: float | None = None,
    fixed_shift: float | None = None,
    bins: int = DEFAULT_BINS,
    n_jobs: int = 1,
) -> list:
    """Run one selection protocol and return its SelectionReports.

    `during` needs a threshold (from `before`'s best row; computed here
    when fixed_threshold is not given); `after` likewise needs the best
    unfiltered shift (fixed_shift, or computed via a `none` sweep).
    """
    if mode not in PROTOCOLS:
        raise ValueError(f"unknown protocol {mode!r}")
    train = sorted(train, key=lambda s: s.subject)
    val = sorted(val, key=lambda s: s.subject)
    if not train or not val:
        raise ValueError("train and validation sets must be non-empty")
    thresholds = tuple(sorted(thresholds))

    if mode == "before":
        cells = [("before", None, 0.0)] + [("before", t, 0.0) for t in thresholds]
        return _run_cells(train, val, cells, model_config, bins, n_jobs)

    if mode == "none":
        cells = [("none", None, s) for s in shifts.shifts]
        return _run_cells(train, val, cells, model_config, bins, n_jobs)

    if mode == "during":
        threshold = fixed_threshold
        if threshold is None:
            before = sweep_protocol(
                "before", train, val, model_config,
                thresholds=thresholds, bins=bins, n_jobs=n_jobs,
            )
            threshold = best_report(before).threshold
            log.info("during sweep: before-stage selected threshold %s", threshold)
        cells = [("during", threshold, s) for s in shifts.shifts]
        return _run_cells(train, val, cells, model_config, bins, n_jobs)

    # mode == "after"
    shift = fixed_shift
    if shift is None:
        none_reports = sweep_protocol(
            "none", train, val, model_config, shifts=shifts, bins=bins, n_jobs=n_jobs
        )
        shift = best_report(none_reports).shift_s
        log.info("after sweep: no-filter stage selected shift %.1f s", shift)
    cells = [("after", None, shift)] + [("after", t, shift) for t in thresholds]
    return _run_cells(train, val, cells, model_config, bins, n_jobs)


def aligned_sequence(subject: str, matrix: FeatureMatrix, trace) -> SubjectSequence:
    """Pair feature rows with the label values at their window-end frames.

    Traces longer or shorter than the frame series are truncated to the
    common coverage with a warning.
    """
    labels = _label_array(trace)
    usable = min(len(matrix), labels.size - matrix.frame_offset)
    if usable <= 0:
        raise ValueError(f"{subject}: no overlap between features and labels")
    if usable != len(matrix) or labels.size != matrix.frame_offset + len(matrix):
        log.warning(
            "%s: truncating to %d aligned rows (features %d, labels %d)",
            subject, usable, len(matrix), labels.size,
        )
    return SubjectSequence(
        subject=subject,
        features=matrix.values[:usable],
        targets=labels[matrix.frame_offset : matrix.frame_offset + usable],
    )
