"""Core data types for multi-rate diagnostic shots and the shot file format."""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ShotFormatError

SLOW_DT_MS = 0.2
FAST_DT_MS = 0.008
DECIMATION_FACTOR = 25  # 0.2 / 0.008


class ChannelId(enum.IntEnum):
    """The ten diagnostics. The integer value is the column index everywhere."""

    Ip = 0
    Vloop = 1
    Bolo = 2
    Mirnov16 = 3
    HXR = 4
    SXR = 5
    HAlpha = 6
    C3 = 7
    Delta = 8
    O1 = 9


CHANNELS: tuple[ChannelId, ...] = tuple(ChannelId)
CHANNEL_NAMES: tuple[str, ...] = tuple(c.name for c in CHANNELS)
N_CHANNELS = len(CHANNELS)
FAST_CHANNELS = frozenset({ChannelId.Mirnov16, ChannelId.HXR, ChannelId.SXR})


def expected_dt(channel: ChannelId) -> float:
    return FAST_DT_MS if channel in FAST_CHANNELS else SLOW_DT_MS


@dataclass(frozen=True)
class ChannelSeries:
    channel: ChannelId
    dt_ms: float
    t0_ms: float
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "channel", ChannelId(self.channel))

    def __len__(self) -> int:
        return len(self.samples)

    def replace(self, **changes) -> "ChannelSeries":
        kw = dict(channel=self.channel, dt_ms=self.dt_ms, t0_ms=self.t0_ms,
                  samples=self.samples)
        kw.update(changes)
        return ChannelSeries(**kw)


@dataclass(frozen=True)
class RawShot:
    shot_id: int
    channels: tuple[ChannelSeries, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    def get(self, channel: ChannelId) -> ChannelSeries:
        for s in self.channels:
            if s.channel == channel:
                return s
        raise KeyError(ChannelId(channel).name)

    def with_channel(self, series: ChannelSeries) -> "RawShot":
        chans = tuple(series if s.channel == series.channel else s for s in self.channels)
        return RawShot(self.shot_id, chans)


@dataclass(frozen=True)
class AlignedShot:
    """All channels on the common grid as a T x 10 matrix.

    ``normalized`` records whether ``values`` are still in raw units. ``label``
    and ``disruption_step`` stay ``None`` until the shot is labeled.
    """

    shot_id: int
    values: np.ndarray
    dt_ms: float = SLOW_DT_MS
    t0_ms: float = 0.0
    label: Optional[np.ndarray] = None
    disruption_step: Optional[int] = None
    normalized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != N_CHANNELS:
            raise ValueError(f"values must be T x {N_CHANNELS}, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.label is not None:
            lab = np.asarray(self.label, dtype=np.int8)
            if lab.shape != (vals.shape[0],):
                raise ValueError("label length must equal the number of time steps")
            lab.setflags(write=False)
            object.__setattr__(self, "label", lab)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def labeled(self) -> bool:
        return self.label is not None

    def times(self) -> np.ndarray:
        return self.t0_ms + self.dt_ms * np.arange(self.n_steps)

    def replace(self, **changes) -> "AlignedShot":
        kw = dict(shot_id=self.shot_id, values=self.values, dt_ms=self.dt_ms,
                  t0_ms=self.t0_ms, label=self.label,
                  disruption_step=self.disruption_step, normalized=self.normalized)
        kw.update(changes)
        return AlignedShot(**kw)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        # truthy when the shot is admissible
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_raw_shot(shot: RawShot) -> ValidationReport:
    """Collect every reason the shot would be rejected; never raises."""
    report = ValidationReport()
    seen: dict[ChannelId, int] = {}
    for s in shot.channels:
        seen[s.channel] = seen.get(s.channel, 0) + 1
    for ch in CHANNELS:
        n = seen.get(ch, 0)
        if n == 0:
            report.violations.append(f"missing channel {ch.name}")
        elif n > 1:
            report.violations.append(f"duplicate channel {ch.name}")
    for s in shot.channels:
        name = s.channel.name
        if not (s.dt_ms > 0) or not math.isclose(s.dt_ms, expected_dt(s.channel),
                                                 rel_tol=1e-9, abs_tol=0.0):
            report.violations.append(f"wrong rate on {name}")
        if len(s.samples) == 0:
            report.violations.append(f"empty series on {name}")
            continue
        bad = np.flatnonzero(~np.isfinite(s.samples))
        for idx in bad:
            report.violations.append(f"non-finite sample on {name} at index {int(idx)}")
    if shot.shot_id < 0:
        report.violations.append("negative shot_id")
    return report


# --- canonical text format -------------------------------------------------

def _fmt(x: float) -> str:
    # repr of a Python float is the shortest string that round-trips
    return repr(float(x))


def format_shot(shot: RawShot) -> str:
    out = io.StringIO()
    out.write(f"shot_id={int(shot.shot_id)}\n")
    for ch in CHANNELS:
        s = shot.get(ch)
        out.write(f"channel={ch.name} dt_ms={_fmt(s.dt_ms)} t0_ms={_fmt(s.t0_ms)} n={len(s)}\n")
        for v in s.samples.tolist():
            out.write(repr(v))
            out.write("\n")
    return out.getvalue()


def write_shot_file(shot: RawShot, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_shot(shot))
    return path


def _parse_kv(line: str, lineno: int) -> dict[str, str]:
    out = {}
    for tok in line.split(" "):
        key, sep, val = tok.partition("=")
        if not sep:
            raise ShotFormatError(f"line {lineno}: expected key=value, got {tok!r}")
        out[key] = val
    return out


def parse_shot(text: str) -> RawShot:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith("shot_id="):
        raise ShotFormatError("line 1: expected shot_id=<int>")
    try:
        shot_id = int(lines[0][len("shot_id="):])
    except ValueError:
        raise ShotFormatError(f"line 1: bad shot_id {lines[0]!r}") from None
    pos = 1
    channels = []
    while pos < len(lines):
        hdr = _parse_kv(lines[pos], pos + 1)
        try:
            ch = ChannelId[hdr["channel"]]
            dt = float(hdr["dt_ms"])
            t0 = float(hdr["t0_ms"])
            n = int(hdr["n"])
        except (KeyError, ValueError) as exc:
            raise ShotFormatError(f"line {pos + 1}: bad channel header ({exc})") from None
        body = lines[pos + 1: pos + 1 + n]
        if len(body) != n:
            raise ShotFormatError(f"channel {ch.name}: expected {n} samples, file ends early")
        try:
            samples = np.array([float(v) for v in body], dtype=np.float64)
        except ValueError as exc:
            raise ShotFormatError(f"channel {ch.name}: {exc}") from None
        channels.append(ChannelSeries(ch, dt, t0, samples))
        pos += 1 + n
    order = [c.channel for c in channels]
    if order != list(CHANNELS):
        raise ShotFormatError(
            "channels must appear once each in order " + ",".join(CHANNEL_NAMES)
        )
    return RawShot(shot_id, tuple(channels))


def read_shot_file(path) -> RawShot:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_shot(fh.read())


def shot_filename(shot_id: int) -> str:
    return f"shot_{shot_id:04d}"


ALIGNED_CSV_HEADER = "t_ms," + ",".join(CHANNEL_NAMES) + ",label"


def write_aligned_csv(shot: AlignedShot, path) -> Path:
    """Export the aligned matrix; the label column is empty for unlabeled shots."""
    path = Path(path)
    times = shot.times()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ALIGNED_CSV_HEADER + "\n")
        for t in range(shot.n_steps):
            row = [_fmt(times[t])] + [repr(v) for v in shot.values[t].tolist()]
            row.append("" if shot.label is None else str(int(shot.label[t])))
            fh.write(",".join(row) + "\n")
    return path


def read_aligned_csv(path, shot_id: int = 0, normalized: bool = False) -> AlignedShot:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != ALIGNED_CSV_HEADER:
            raise ShotFormatError(f"{path}: unexpected header {header!r}")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if not rows:
        raise ShotFormatError(f"{path}: no rows")
    times = np.array([float(r[0]) for r in rows])
    values = np.array([[float(v) for v in r[1:1 + N_CHANNELS]] for r in rows])
    labels = [r[-1] for r in rows]
    label = None
    disruption = None
    if all(labels):
        label = np.array([int(v) for v in labels], dtype=np.int8)
        ones = np.flatnonzero(label)
        disruption = int(ones[0]) if len(ones) else None
    dt = float(times[1] - times[0]) if len(times) > 1 else SLOW_DT_MS
    return AlignedShot(shot_id, values, dt_ms=round(dt, 9), t0_ms=float(times[0]),
                       label=label, disruption_step=disruption, normalized=normalized)

