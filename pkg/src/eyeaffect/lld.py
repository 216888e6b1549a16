"""Low-level descriptors: 8 numeric and 6 binary per-frame channels.

Numeric channels come straight from the frame records plus first
differences; the five derived binary channels use the thresholds below.
Only the direct-gaze binary has a ground-truth source (a human coder);
when that column is absent a gaze-cone fallback is used and flagged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, MissingChannelError

log = logging.getLogger(__name__)

NUMERIC_CHANNELS = (
    "gaze_x", "gaze_y", "d_gaze_x", "d_gaze_y",
    "pupil_diam", "d_pupil_diam", "blink_intensity",
)
BINARY_CHANNELS = (
    "direct_gaze", "gaze_approach", "eyes_fixated",
    "eye_closure", "pupil_dilation", "pupil_constriction",
)

# Left-eye iris ring within the OpenFace 56-point eye-region layout.
LEFT_EYE_RING = tuple(range(28, 36))


@dataclass(frozen=True)
class ThresholdConfig:
    """Binary-channel derivation thresholds (config-file overridable)."""

    closure_threshold: float = 1.0        # AU intensity on the 0-5 scale
    fixation_threshold: float = 0.005     # rad/frame gaze speed
    approach_epsilon: float = 0.0         # rad margin for norm decrease
    pupil_delta: float = 0.01             # mm/frame
    direct_gaze_angle: float = 0.087      # rad (~5 degrees) fallback cone

    def __post_init__(self):
        if self.pupil_delta < 0:
            raise ValueError("pupil_delta must be >= 0")
        if self.fixation_threshold < 0:
            raise ValueError("fixation_threshold must be >= 0")


@dataclass(frozen=True)
class DescriptorSeries:
    """Aligned per-frame LLD channels for one subject."""

    gaze_x: np.ndarray
    gaze_y: np.ndarray
    d_gaze_x: np.ndarray
    d_gaze_y: np.ndarray
    pupil_diam: np.ndarray
    d_pupil_diam: np.ndarray
    blink_intensity: np.ndarray
    direct_gaze: np.ndarray | None = None
    gaze_approach: np.ndarray | None = None
    eyes_fixated: np.ndarray | None = None
    eye_closure: np.ndarray | None = None
    pupil_dilation: np.ndarray | None = None
    pupil_constriction: np.ndarray | None = None
    direct_gaze_fallback: bool = False

    def __post_init__(self):
        n = self.gaze_x.size
        for name in NUMERIC_CHANNELS + BINARY_CHANNELS:
            ch = getattr(self, name)
            if ch is not None and ch.size != n:
                raise AlignmentError(f"channel {name} has length {ch.size}, expected {n}")
        if self.pupil_dilation is not None and self.pupil_constriction is not None:
            if np.any(self.pupil_dilation & self.pupil_constriction):
                raise ValueError("pupil dilation and constriction overlap")

    def __len__(self):
        return self.gaze_x.size

    def window(self, start: int, end: int) -> "DescriptorSeries":
        """Slice of frames [start, end] inclusive (delta channels keep the
        values they had in the full series)."""
        if not 0 <= start <= end < len(self):
            raise ValueError(f"window [{start}, {end}] outside series of {len(self)}")
        sl = slice(start, end + 1)
        fields = {name: getattr(self, name)[sl] for name in NUMERIC_CHANNELS}
        for name in BINARY_CHANNELS:
            ch = getattr(self, name)
            fields[name] = None if ch is None else ch[sl]
        return DescriptorSeries(direct_gaze_fallback=self.direct_gaze_fallback, **fields)

    @property
    def has_binary(self) -> bool:
        return all(getattr(self, name) is not None for name in BINARY_CHANNELS)

    def numeric(self, name: str) -> np.ndarray:
        if name not in NUMERIC_CHANNELS:
            raise KeyError(name)
        return getattr(self, name)

    def binary(self, name: str) -> np.ndarray:
        if name not in BINARY_CHANNELS:
            raise KeyError(name)
        ch = getattr(self, name)
        if ch is None:
            raise MissingChannelError(f"binary channel {name} not derived yet")
        return ch


def pupil_diameter_from_landmarks(eye_landmarks, ring_indices=LEFT_EYE_RING) -> float:
    """Pupil diameter as 2x mean distance of iris-ring points to centroid."""
    points = np.asarray(eye_landmarks, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected (n, 3) landmark array, got {points.shape}")
    ring_indices = list(ring_indices)
    if len(ring_indices) < 3:
        raise ValueError("pupil ring needs at least 3 points")
    if max(ring_indices) >= points.shape[0]:
        raise ValueError(
            f"ring index {max(ring_indices)} outside {points.shape[0]} landmarks"
        )
    ring = points[ring_indices]
    centroid = ring.mean(axis=0)
    return float(2.0 * np.linalg.norm(ring - centroid, axis=1).mean())


def _first_difference(values: np.ndarray) -> np.ndarray:
    delta = np.zeros_like(values)
    if values.size > 1:
        delta[1:] = values[1:] - values[:-1]
    return delta


def derive_numeric_llds(frames, ring_indices=LEFT_EYE_RING) -> DescriptorSeries:
    """Build the 8 numeric channels from parsed frame records.

    Pupil diameter comes from the dedicated column when present, otherwise
    from the eye landmarks; a frame with neither is an error.
    """
    if not frames:
        raise ValueError("empty frame sequence")
    gaze_x = np.array([f.gaze_x for f in frames])
    gaze_y = np.array([f.gaze_y for f in frames])
    blink = np.array([f.blink_intensity for f in frames])
    pupil = np.empty(len(frames))
    for i, f in enumerate(frames):
        if f.pupil_diameter is not None:
            pupil[i] = f.pupil_diameter
        elif f.eye_landmarks:
            pupil[i] = pupil_diameter_from_landmarks(f.eye_landmarks, ring_indices)
        else:
            raise MissingChannelError(
                f"frame {f.frame_index}: no pupil diameter and no eye landmarks"
            )
    return DescriptorSeries(
        gaze_x=gaze_x,
        gaze_y=gaze_y,
        d_gaze_x=_first_difference(gaze_x),
        d_gaze_y=_first_difference(gaze_y),
        pupil_diam=pupil,
        d_pupil_diam=_first_difference(pupil),
        blink_intensity=blink,
    )


def derive_binary_llds(
    series: DescriptorSeries,
    cfg: ThresholdConfig = ThresholdConfig(),
    direct_gaze_input=None,
) -> DescriptorSeries:
    """Fill in the 6 binary channels from the numeric ones.

    direct_gaze_input (per-frame booleans) is authoritative when given;
    the fallback gaze-cone rule is flagged via direct_gaze_fallback.
    """
    n = len(series)
    eye_closure = series.blink_intensity >= cfg.closure_threshold
    speed = np.hypot(series.d_gaze_x, series.d_gaze_y)
    eyes_fixated = speed < cfg.fixation_threshold
    norms = np.hypot(series.gaze_x, series.gaze_y)
    gaze_approach = np.zeros(n, dtype=bool)
    if n > 1:
        gaze_approach[1:] = norms[1:] < norms[:-1] - cfg.approach_epsilon
    dilation = series.d_pupil_diam > cfg.pupil_delta
    constriction = series.d_pupil_diam < -cfg.pupil_delta
    fallback = direct_gaze_input is None
    if fallback:
        direct = norms < cfg.direct_gaze_angle
        log.debug("direct gaze derived from gaze-cone fallback (no coder input)")
    else:
        direct = np.asarray(direct_gaze_input, dtype=bool)
        if direct.size != n:
            raise AlignmentError(
                f"direct gaze input has length {direct.size}, expected {n}"
            )
    return DescriptorSeries(
        gaze_x=series.gaze_x,
        gaze_y=series.gaze_y,
        d_gaze_x=series.d_gaze_x,
        d_gaze_y=series.d_gaze_y,
        pupil_diam=series.pupil_diam,
        d_pupil_diam=series.d_pupil_diam,
        blink_intensity=series.blink_intensity,
        direct_gaze=direct,
        gaze_approach=gaze_approach,
        eyes_fixated=eyes_fixated,
        eye_closure=eye_closure,
        pupil_dilation=dilation,
        pupil_constriction=constriction,
        direct_gaze_fallback=fallback,
    )


def derive_llds(frames, cfg: ThresholdConfig = ThresholdConfig()) -> DescriptorSeries:
    """Numeric + binary derivation in one step, using any human-coded
    direct-gaze column carried on the frames."""
    numeric = derive_numeric_llds(frames)
    coded = [f.direct_gaze for f in frames]
    direct_input = None
    if all(v is not None for v in coded):
        direct_input = np.array(coded, dtype=bool)
    elif any(v is not None for v in coded):
        log.warning("direct gaze coded for only part of the series; using fallback rule")
    return derive_binary_llds(numeric, cfg, direct_input)
