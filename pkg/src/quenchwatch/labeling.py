"""Disruption step from the plasma-current quench, and the binary label series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .signal_model import AlignedShot, ChannelId

DEFAULT_MIN_DROP = 0.05


@dataclass(frozen=True)
class DisruptionMark:
    step: int
    drop_magnitude: float


def find_disruption(ip, min_drop: float = DEFAULT_MIN_DROP) -> Optional[DisruptionMark]:
    """Step with the largest single-step fall of Ip, earliest on ties.

    Returns None when the largest fall is below ``min_drop``.
    """
    ip = np.asarray(ip, dtype=np.float64)
    if ip.ndim != 1 or len(ip) < 2:
        raise ValueError("find_disruption needs at least two Ip samples")
    if min_drop < 0:
        raise ValueError("min_drop must be non-negative")
    drops = ip[:-1] - ip[1:]
    k = int(np.argmax(drops))  # argmax returns the first maximum
    if not drops[k] >= min_drop or drops[k] <= 0:
        return None
    return DisruptionMark(step=k + 1, drop_magnitude=float(drops[k]))


def make_label(T: int, mark: Optional[DisruptionMark]) -> np.ndarray:
    label = np.zeros(T, dtype=np.int8)
    if mark is None:
        return label
    if not 0 <= mark.step < T:
        raise ValueError(f"disruption step {mark.step} outside [0, {T})")
    label[mark.step:] = 1
    return label


def shot_ip_scaled(shot: AlignedShot) -> np.ndarray:
    """Ip on a 0..1 scale for labeling.

    Normalized shots are used as-is; raw shots are min-max scaled by their
    own Ip range so labels do not depend on which corpus was used for
    normalization.
    """
    ip = shot.values[:, ChannelId.Ip]
    if shot.normalized:
        return ip
    lo, hi = ip.min(), ip.max()
    if hi == lo:
        return np.zeros_like(ip)
    return (ip - lo) / (hi - lo)


def label_shot(shot: AlignedShot, min_drop: float = DEFAULT_MIN_DROP) -> AlignedShot:
    mark = find_disruption(shot_ip_scaled(shot), min_drop)
    return shot.replace(label=make_label(shot.n_steps, mark),
                        disruption_step=None if mark is None else mark.step)
