"""Deterministic phenomenological generator of multi-rate tokamak shots.

Each shot is drawn from its own generator seeded by ``SeedSequence([seed,
shot_index])``, so shots can be produced in any order or in parallel with
identical results. Waveforms are qualitative only: a current ramp, flat top
and fast quench on Ip, an exponentially growing Mirnov precursor that the
digitizer clips at +/- ``clip_rail``, bursty X-ray channels and slow drifts
on the spectroscopic channels, all following the precursor envelope.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .signal_model import (
    CHANNELS,
    FAST_DT_MS,
    SLOW_DT_MS,
    ChannelId,
    ChannelSeries,
    RawShot,
    shot_filename,
    write_shot_file,
)

# nominal channel spans; noise sigma is a fraction of these
CHANNEL_SCALE = {
    ChannelId.Ip: 1.0,
    ChannelId.Vloop: 10.0,
    ChannelId.Bolo: 2.0,
    ChannelId.Mirnov16: 10.0,
    ChannelId.HXR: 4.0,
    ChannelId.SXR: 2.0,
    ChannelId.HAlpha: 2.0,
    ChannelId.C3: 1.5,
    ChannelId.Delta: 2.0,
    ChannelId.O1: 1.0,
}


def _default_noise() -> dict:
    noise = {ch: 0.02 for ch in CHANNELS}
    # Ip is a Rogowski-coil measurement, much cleaner than the rest; at 2%
    # the single-step noise difference would rival the no-quench threshold
    noise[ChannelId.Ip] = 0.005
    return noise


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_shots: int = 119
    shot_duration_ms: float = 100.0
    quench_time_range_ms: tuple[float, float] = (30.0, 40.0)
    quench_time_ms: Optional[float] = None  # fixes the quench time for every shot
    quench_width_ms: float = 1.0
    ip_flat_top: float = 1.0
    ip_ramp_ms: float = 10.0
    precursor_lead_range_ms: tuple[float, float] = (10.0, 25.0)
    mirnov_growth_rate: float = 0.4  # 1/ms
    mirnov_seed_amplitude: float = 0.1
    noise_sigma: dict = field(default_factory=_default_noise)
    clip_rail: float = 5.0
    disruptive_fraction: float = 1.0

    def validate(self) -> None:
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")
        if self.shot_duration_ms <= 0 or self.quench_width_ms <= 0:
            raise ValueError("shot_duration_ms and quench_width_ms must be positive")
        if self.mirnov_growth_rate <= 0 or self.clip_rail <= 0 or self.ip_flat_top <= 0:
            raise ValueError("growth rate, clip rail and flat top must be positive")
        lo, hi = self.quench_time_range_ms
        if self.quench_time_ms is not None:
            lo = hi = self.quench_time_ms
        if not 0 < lo <= hi:
            raise ValueError("quench time range must be positive and ordered")
        if hi + 3 * self.quench_width_ms >= self.shot_duration_ms:
            raise ValueError("quench_time + 3*quench_width must precede the end of the shot")
        plo, phi = self.precursor_lead_range_ms
        if not 0 < plo <= phi:
            raise ValueError("precursor lead range must be positive and ordered")
        if not 0.0 <= self.disruptive_fraction <= 1.0:
            raise ValueError("disruptive_fraction must lie in [0, 1]")
        for ch in CHANNELS:
            if self.noise_sigma.get(ch, 0.0) < 0:
                raise ValueError(f"negative noise sigma on {ch.name}")

    def with_noise(self, sigma: float) -> "SynthConfig":
        return replace(self, noise_sigma={ch: sigma for ch in CHANNELS})


@dataclass(frozen=True)
class ShotTruth:
    shot_id: int
    disruptive: bool
    quench_time_ms: Optional[float]
    quench_step: Optional[int]
    precursor_start_ms: Optional[float]


def disruptive_mask(config: SynthConfig) -> np.ndarray:
    """Exactly round(fraction * n) disruptive shots, positions chosen by seed."""
    n = config.n_shots
    k = int(round(config.disruptive_fraction * n))
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:k]] = True
    return mask


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _precursor_envelope(t, start, rate, seed_amp, rail):
    """Mirnov amplitude in rail units: 0 before ``start``, saturating at 1."""
    grow = seed_amp * np.expm1(rate * np.clip(t - start, 0.0, None))
    return np.minimum(grow / rail, 1.0), grow


def generate_shot(config: SynthConfig, shot_index: int,
                  disruptive: Optional[bool] = None) -> tuple[RawShot, ShotTruth]:
    config.validate()
    if disruptive is None:
        disruptive = bool(disruptive_mask(config)[shot_index]) if shot_index < config.n_shots \
            else config.disruptive_fraction >= 1.0
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, shot_index]))
    dur = config.shot_duration_ms
    n_slow = int(round(dur / SLOW_DT_MS))
    n_fast = n_slow * int(round(SLOW_DT_MS / FAST_DT_MS))
    ts = SLOW_DT_MS * np.arange(n_slow)
    tf = FAST_DT_MS * np.arange(n_fast)

    # per-shot draws, always in the same order so disruptive and quiet shots
    # consume the stream identically
    lo, hi = config.quench_time_range_ms
    tq = rng.uniform(lo, hi) if config.quench_time_ms is None else config.quench_time_ms
    if config.quench_time_ms is not None:
        rng.uniform(lo, hi)
    lead = rng.uniform(*config.precursor_lead_range_ms)
    flat = config.ip_flat_top * rng.uniform(0.85, 1.1)
    f_mirnov = rng.uniform(8.0, 15.0)  # kHz = cycles/ms
    phase = rng.uniform(0.0, 2 * math.pi)
    shape = rng.uniform(0.8, 1.2, size=len(CHANNELS))
    delta_sign = rng.choice([-1.0, 1.0])

    rail = config.clip_rail
    if disruptive:
        ps = tq - lead
        # centred half a step early so the largest single-step fall lands on
        # round(tq / dt): the step whose sample is the first one below half
        centre = tq - SLOW_DT_MS / 2
        s = config.quench_width_ms / 8.0
        alive_s = 1.0 - _logistic((ts - centre) / s)
        alive_f = 1.0 - _logistic((tf - centre) / s)
        env_s, _ = _precursor_envelope(ts, ps, config.mirnov_growth_rate,
                                       config.mirnov_seed_amplitude, rail)
        env_f, grow_f = _precursor_envelope(tf, ps, config.mirnov_growth_rate,
                                            config.mirnov_seed_amplitude, rail)
        spike_s = np.exp(-0.5 * ((ts - tq) / 0.4) ** 2)
        spike_f = np.exp(-0.5 * ((tf - tq) / 0.4) ** 2)
        after_f = np.where(tf >= tq, np.exp(-np.clip(tf - tq, 0, None) / 3.0), 0.0)
    else:
        tq = ps = None
        alive_s = np.ones(n_slow)
        alive_f = np.ones(n_fast)
        env_s = np.zeros(n_slow)
        env_f = grow_f = np.zeros(n_fast)
        spike_s = np.zeros(n_slow)
        spike_f = np.zeros(n_fast)
        after_f = np.zeros(n_fast)

    ramp = np.clip(ts / config.ip_ramp_ms, 0.0, 1.0)
    if not disruptive:
        ramp = ramp * np.clip((dur - ts) / 20.0, 0.0, 1.0)
    ramp_f = np.interp(tf, ts, ramp)

    clean = {}
    clean[ChannelId.Ip] = flat * ramp * (1.0 - 0.03 * env_s) * alive_s
    clean[ChannelId.Vloop] = (8.0 * np.exp(-ts / 1.5) + 1.5 * alive_s * (1.0 + 0.3 * env_s)
                              + 6.0 * shape[1] * spike_s)
    clean[ChannelId.Bolo] = (alive_s * (0.4 * ramp + 0.6 * shape[2] * env_s)
                             + 1.0 * spike_s)
    mirnov_amp = (0.3 * ramp_f + grow_f) * alive_f + 2.0 * rail * spike_f
    clean[ChannelId.Mirnov16] = mirnov_amp * np.sin(2 * math.pi * f_mirnov * tf + phase)
    hxr_rate = 0.05 + 0.6 * shape[4] * env_f * alive_f + 2.0 * after_f
    clean[ChannelId.HXR] = hxr_rate * rng.exponential(1.0, size=n_fast)
    sxr_level = alive_f * ramp_f * (0.8 + 0.4 * shape[5] * env_f)
    clean[ChannelId.SXR] = sxr_level + (0.05 + 0.3 * env_f) * rng.exponential(1.0, size=n_fast)
    clean[ChannelId.HAlpha] = 0.6 + 0.3 * ramp * alive_s + 0.5 * shape[6] * env_s * alive_s \
        + 0.8 * spike_s
    clean[ChannelId.C3] = alive_s * (0.3 * ramp + 0.6 * shape[7] * env_s)
    clean[ChannelId.Delta] = alive_s * delta_sign * (0.1 * ramp + 0.5 * shape[8] * env_s) \
        + delta_sign * 0.8 * spike_s
    clean[ChannelId.O1] = alive_s * (0.2 * ramp + 0.4 * shape[9] * env_s)

    channels = []
    for ch in CHANNELS:
        x = clean[ch]
        sigma = config.noise_sigma.get(ch, 0.0) * CHANNEL_SCALE[ch]
        if ch == ChannelId.Ip:
            sigma *= flat
        if sigma > 0:
            x = x + rng.normal(0.0, sigma, size=len(x))
        if ch == ChannelId.Mirnov16:
            x = np.clip(x, -rail, rail)
        dt = FAST_DT_MS if len(x) == n_fast else SLOW_DT_MS
        channels.append(ChannelSeries(ch, dt, 0.0, x))

    truth = ShotTruth(
        shot_id=shot_index,
        disruptive=disruptive,
        quench_time_ms=tq,
        quench_step=None if tq is None else int(round(tq / SLOW_DT_MS)),
        precursor_start_ms=ps,
    )
    return RawShot(shot_index, tuple(channels)), truth


def generate_corpus(config: SynthConfig) -> tuple[list[RawShot], list[ShotTruth]]:
    config.validate()
    mask = disruptive_mask(config)
    shots, truths = [], []
    for i in range(config.n_shots):
        shot, truth = generate_shot(config, i, disruptive=bool(mask[i]))
        shots.append(shot)
        truths.append(truth)
    return shots, truths


MANIFEST_NAME = "manifest.csv"


def write_corpus(shots, truths, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for shot in shots:
        write_shot_file(shot, out / shot_filename(shot.shot_id))
    with open(out / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("shot_id,quench_step,disruptive\n")
        for t in truths:
            q = "" if t.quench_step is None else str(t.quench_step)
            fh.write(f"{t.shot_id},{q},{int(t.disruptive)}\n")
    return out


def read_manifest(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"shot_id": int(r["shot_id"]),
         "quench_step": int(r["quench_step"]) if r["quench_step"] else None,
         "disruptive": bool(int(r["disruptive"]))}
        for r in rows
    ]
