"""Figure rendering for the CLI report paths. Always writes files, never shows."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import CLASS_ORDER, EvalReport  # noqa: E402
from .preprocess import DecimationMethod, decimate  # noqa: E402
from .signal_model import CHANNEL_NAMES, DECIMATION_FACTOR, AlignedShot, ChannelSeries  # noqa: E402

STYLE = {
    "figure.figsize": (8.0, 4.5),
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_replay(path, times: np.ndarray, y: np.ndarray, threshold: float,
                alarm_step: Optional[int] = None, shot: Optional[AlignedShot] = None,
                channels=("Ip", "Mirnov16", "HXR")) -> Path:
    """Disruption probability against time, with a few scaled input channels."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if shot is not None:
            for name in channels:
                col = shot.values[:len(times), CHANNEL_NAMES.index(name)]
                span = np.ptp(col) or 1.0
                ax.plot(times, (col - col.min()) / span, lw=0.8, alpha=0.6, label=name)
            if shot.disruption_step is not None:
                ax.axvline(times[0] + shot.disruption_step * shot.dt_ms, color="k", ls="--",
                           lw=1, label="labeled disruption")
        ax.plot(times, y, color="tab:red", lw=1.6, label="model output")
        ax.axhline(threshold, color="tab:red", ls=":", lw=1, label=f"threshold {threshold:g}")
        if alarm_step is not None:
            ax.axvline(times[alarm_step], color="tab:red", lw=1, alpha=0.7, label="alarm")
        ax.set_xlabel("time (ms)")
        ax.set_ylabel("scaled value / probability")
        ax.set_ylim(-0.05, 1.1)
        ax.legend(loc="upper right", ncol=2)
        return _save(fig, path)


def plot_decimation(path, series: ChannelSeries, factor: int = DECIMATION_FACTOR,
                    window_ms: Optional[tuple[float, float]] = None) -> Path:
    """Raw fast-channel trace against its max/min/avg window reductions."""
    t_raw = series.t0_ms + series.dt_ms * np.arange(len(series))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        sel = slice(None)
        if window_ms is not None:
            sel = (t_raw >= window_ms[0]) & (t_raw <= window_ms[1])
        ax.plot(t_raw[sel], series.samples[sel], color="0.7", lw=0.5, label="raw")
        for method, color in ((DecimationMethod.WindowMax, "tab:red"),
                              (DecimationMethod.WindowMin, "tab:blue"),
                              (DecimationMethod.WindowAvg, "tab:green")):
            d = decimate(series, factor, method)
            t = d.t0_ms + d.dt_ms * np.arange(len(d))
            keep = slice(None) if window_ms is None else (t >= window_ms[0]) & (t <= window_ms[1])
            ax.plot(t[keep], d.samples[keep], color=color, lw=1.2, label=method.value)
        ax.set_xlabel("time (ms)")
        ax.set_ylabel(series.channel.name)
        ax.legend(loc="upper left")
        return _save(fig, path)


def plot_training_log(path, log) -> Path:
    epochs = [r.epoch for r in log.records]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9.0, 3.5))
        a1.semilogy(epochs, [r.train_loss for r in log.records], label="train")
        a1.semilogy(epochs, [r.val_loss for r in log.records], label="validation")
        a1.axvline(log.best_epoch, color="k", ls=":", lw=1)
        a1.set_xlabel("epoch")
        a1.set_ylabel("loss")
        a1.legend()
        a2.plot(epochs, [r.train_acc for r in log.records], label="train")
        a2.plot(epochs, [r.val_acc for r in log.records], label="validation")
        a2.set_xlabel("epoch")
        a2.set_ylabel("pointwise accuracy")
        return _save(fig, path)


def plot_alarm_summary(path, report: EvalReport) -> Path:
    """Grouped bars of class fractions per split, plus a lead-time histogram."""
    names = list(report.splits)
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(10.0, 3.8))
        x = np.arange(len(CLASS_ORDER))
        width = 0.8 / max(len(names), 1)
        for k, n in enumerate(names):
            s = report.splits[n]
            a1.bar(x + k * width, [s.fraction(c) for c in CLASS_ORDER], width, label=n)
        a1.set_xticks(x + width * (len(names) - 1) / 2)
        a1.set_xticklabels([c.name.replace("Alarm", "") for c in CLASS_ORDER])
        a1.set_ylabel("fraction of shots")
        a1.legend()
        leads = [r.lead_ms for r in report.records if r.lead_ms is not None]
        if leads:
            a2.hist(leads, bins=30, color="0.4")
        for edge in (8.0, 20.0, 40.0):
            a2.axvline(edge, color="tab:red", ls=":", lw=1)
        a2.set_xlabel("lead time (ms)")
        a2.set_ylabel("shots")
        return _save(fig, path)
