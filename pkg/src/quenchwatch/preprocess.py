"""Resampling onto the 0.2 ms grid, min-max normalization and clip detection."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, DataError
from .signal_model import (
    CHANNELS,
    DECIMATION_FACTOR,
    FAST_CHANNELS,
    N_CHANNELS,
    SLOW_DT_MS,
    AlignedShot,
    ChannelSeries,
    RawShot,
    validate_raw_shot,
)


class DecimationMethod(enum.Enum):
    WindowMax = "max"
    WindowMin = "min"
    WindowAvg = "avg"

    @classmethod
    def parse(cls, value) -> "DecimationMethod":
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name):
                return m
        raise ValueError(f"unknown decimation method {value!r} (use max, min or avg)")


def _window_sums(x: np.ndarray, starts: np.ndarray) -> np.ndarray:
    # cumsum accumulates strictly left to right, unlike add.reduceat whose
    # pairwise summation makes the mean depend on the window length
    factor = int(starts[1] - starts[0]) if len(starts) > 1 else len(x)
    full = len(x) // factor
    out = np.empty(len(starts))
    if full:
        out[:full] = np.cumsum(x[:full * factor].reshape(full, factor), axis=1)[:, -1]
    if full < len(starts):
        out[full] = np.cumsum(x[full * factor:])[-1]
    return out


_REDUCERS = {
    DecimationMethod.WindowMax: np.maximum.reduceat,
    DecimationMethod.WindowMin: np.minimum.reduceat,
    DecimationMethod.WindowAvg: _window_sums,
}


def decimate(series: ChannelSeries, factor: int,
             method: DecimationMethod = DecimationMethod.WindowMax) -> ChannelSeries:
    """Reduce consecutive, non-overlapping windows of ``factor`` samples.

    The final window may be shorter than ``factor``; it is reduced over
    whatever samples it holds.
    """
    if factor < 1:
        raise ValueError(f"decimation factor must be >= 1, got {factor}")
    x = series.samples
    n = len(x)
    if n == 0:
        raise ValueError(f"cannot decimate empty series ({series.channel.name})")
    method = DecimationMethod.parse(method)
    starts = np.arange(0, n, factor)
    out = _REDUCERS[method](x, starts)
    if method is DecimationMethod.WindowAvg:
        counts = np.minimum(starts + factor, n) - starts
        out = out / counts
    return series.replace(dt_ms=series.dt_ms * factor, samples=out)


def align_shot(shot: RawShot,
               method: DecimationMethod = DecimationMethod.WindowMax) -> AlignedShot:
    """Put every channel on the 0.2 ms grid and truncate to the common length."""
    report = validate_raw_shot(shot)
    if not report.ok:
        raise DataError(f"shot {shot.shot_id} is not admissible: " + "; ".join(report.violations))
    t0s = [shot.get(ch).t0_ms for ch in CHANNELS]
    if max(t0s) - min(t0s) > SLOW_DT_MS / 2:
        raise AlignmentError(
            f"shot {shot.shot_id}: channel time origins span {max(t0s) - min(t0s):g} ms "
            f"(> {SLOW_DT_MS / 2:g} ms)"
        )
    cols = []
    for ch in CHANNELS:
        s = shot.get(ch)
        if ch in FAST_CHANNELS:
            s = decimate(s, DECIMATION_FACTOR, method)
        cols.append(s.samples)
    T = min(len(c) for c in cols)
    values = np.column_stack([c[:T] for c in cols])
    return AlignedShot(shot.shot_id, values, dt_ms=SLOW_DT_MS, t0_ms=shot.get(CHANNELS[0]).t0_ms)


@dataclass(frozen=True)
class NormStats:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.array(self.mins, dtype=np.float64).reshape(N_CHANNELS)
        maxs = np.array(self.maxs, dtype=np.float64).reshape(N_CHANNELS)
        if np.any(maxs < mins):
            raise ValueError("NormStats requires max >= min for every channel")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins

    @property
    def span(self) -> np.ndarray:
        """Divisor used by the forward map; 1.0 on constant channels."""
        span = self.maxs - self.mins
        return np.where(span == 0.0, 1.0, span)

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return (np.array_equal(self.mins, other.mins)
                and np.array_equal(self.maxs, other.maxs))

    __hash__ = None


def fit_norm(corpus: Iterable[AlignedShot]) -> NormStats:
    shots = list(corpus)
    if not shots:
        raise ValueError("cannot fit normalization on an empty corpus")
    mins = np.min([s.values.min(axis=0) for s in shots], axis=0)
    maxs = np.max([s.values.max(axis=0) for s in shots], axis=0)
    return NormStats(mins, maxs)


def normalize_values(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """(x - min) / (max - min) per channel, constant channels forced to 0.

    Out-of-range inputs are left unclamped. The stream engine repeats this
    exact expression per step, so keep the two in sync.
    """
    out = (np.asarray(values, dtype=np.float64) - stats.mins) / stats.span
    np.copyto(out, 0.0, where=np.broadcast_to(stats.constant, out.shape))
    return out


def denormalize_values(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * (stats.maxs - stats.mins) + stats.mins


def apply_norm(shot: AlignedShot, stats: NormStats) -> AlignedShot:
    if shot.normalized:
        raise ValueError(f"shot {shot.shot_id} is already normalized")
    return shot.replace(values=normalize_values(shot.values, stats), normalized=True)


@dataclass(frozen=True)
class ClipReport:
    fraction: float
    low_rail: float
    high_rail: float
    threshold: float

    @property
    def clipped(self) -> bool:
        return self.fraction >= self.threshold


def detect_clipping(series: ChannelSeries | Sequence[float] | np.ndarray,
                    threshold: float = 0.05) -> ClipReport:
    """Fraction of samples sitting exactly on either global extreme."""
    x = series.samples if isinstance(series, ChannelSeries) else np.asarray(series, dtype=float)
    if len(x) < 2:
        raise ValueError("clip detection needs at least two samples")
    lo, hi = float(x.min()), float(x.max())
    at_rail = (x == lo) | (x == hi)
    return ClipReport(float(at_rail.mean()), lo, hi, threshold)
