"""Closed time intervals on a video timeline and temporal IoU."""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


class InvalidIntervalError(ValueError):
    pass


@dataclass(frozen=True)
class TimeInterval:
    """A closed span ``[start, end]`` in seconds."""

    start: float
    end: float

    def __post_init__(self):
        start, end = float(self.start), float(self.end)
        if not (math.isfinite(start) and math.isfinite(end)):
            raise InvalidIntervalError(f"non-finite interval [{self.start}, {self.end}]")
        if start < 0 or end < 0:
            raise InvalidIntervalError(f"negative interval bound [{self.start}, {self.end}]")
        if start > end:
            raise InvalidIntervalError(f"interval start > end: [{self.start}, {self.end}]")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def length(self):
        return self.end - self.start

    def as_list(self):
        return [self.start, self.end]


@dataclass(frozen=True)
class VideoTimeline:
    duration: float

    def __post_init__(self):
        d = float(self.duration)
        if not (math.isfinite(d) and d > 0):
            raise ValueError(f"timeline duration must be positive, got {self.duration}")
        object.__setattr__(self, "duration", d)

    @property
    def full_span(self):
        return TimeInterval(0.0, self.duration)


def interval_length(i: TimeInterval) -> float:
    return i.end - i.start


def tiou(a: TimeInterval, b: TimeInterval) -> float:
    """Intersection length over union length.

    Zero-length unions (two identical points) score 0 so degenerate point
    predictions are never rewarded.
    """
    if not isinstance(a, TimeInterval) or not isinstance(b, TimeInterval):
        raise TypeError("tiou expects TimeInterval arguments")
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter < 0.0:
        inter = 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def tiou_batch(a, b):
    """Vectorised tIoU over ``(n, 2)`` arrays of ``[start, end]`` rows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != 2 or b.shape[-1] != 2:
        raise ValueError("expected arrays of shape (..., 2)")
    for arr in (a, b):
        if not np.all(np.isfinite(arr)) or np.any(arr < 0) or np.any(arr[..., 0] > arr[..., 1]):
            raise InvalidIntervalError("batch contains an invalid interval")
    return _kernels.tiou_many(a[..., 0], a[..., 1], b[..., 0], b[..., 1])


def clamp_to_timeline(i, t: VideoTimeline) -> TimeInterval:
    """Clamp an interval onto ``[0, duration]``.

    ``i`` may be a TimeInterval or a raw ``(start, end)`` pair; raw pairs may
    carry negative bounds (e.g. from an out-of-range prediction).
    """
    if isinstance(i, TimeInterval):
        start, end = i.start, i.end
    else:
        start, end = (float(x) for x in i)
        if not (math.isfinite(start) and math.isfinite(end)) or start > end:
            raise InvalidIntervalError(f"invalid raw interval {tuple(i)}")
    lo = min(max(start, 0.0), t.duration)
    hi = min(max(end, 0.0), t.duration)
    return TimeInterval(lo, hi)
