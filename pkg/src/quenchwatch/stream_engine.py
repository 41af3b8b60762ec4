"""Per-step real-time inference with a latched threshold alarm.

The engine consumes one raw (unnormalized) 10-vector per 0.2 ms tick. All
buffers are allocated at reset, and normalization plus the cell update run
inside one compiled kernel, so a step touches no new heap memory.
"""

from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass, field
from typing import Optional, Union

import numba
import numpy as np

from .nn_core import ModelParams, _cell_step, _sigmoid
from .preprocess import DecimationMethod, align_shot
from .signal_model import N_CHANNELS, AlignedShot, RawShot

WARMUP_STEPS = 10
PRECISIONS = {"f64": np.float64, "f32": np.float32}


@numba.njit(cache=True)
def _stream_kernel(W, U, b, wy, by, mins, span, const, x_raw, xbuf, h, c, gates):
    """Normalize, advance the cell in place and return y; NaN leaves state untouched."""
    D = x_raw.shape[0]
    for k in range(D):
        if not math.isfinite(x_raw[k]):
            return math.nan
    for k in range(D):
        if const[k]:
            xbuf[k] = 0.0
        else:
            xbuf[k] = (x_raw[k] - mins[k]) / span[k]
    z = _cell_step(W, U, b, wy, by, xbuf, h, c, gates)
    return _sigmoid(z)


@dataclass
class LatencyStats:
    samples_us: np.ndarray
    warmup: int = WARMUP_STEPS

    def _steady(self) -> np.ndarray:
        if len(self.samples_us) == 0:
            raise ValueError("no latency samples recorded")
        s = self.samples_us[self.warmup:]
        return s if len(s) else self.samples_us

    @property
    def p50(self) -> float:
        return float(np.percentile(self._steady(), 50))

    @property
    def p95(self) -> float:
        return float(np.percentile(self._steady(), 95))

    @property
    def max(self) -> float:
        return float(np.max(self._steady()))

    def summary_line(self) -> str:
        return f"{self.p50:.3f},{self.p95:.3f},{self.max:.3f}"


@dataclass
class StreamState:
    """Live state of one shot. Owned by a single consumer; never share it."""

    params: ModelParams
    threshold: float
    precision: str
    normalize: bool
    h: np.ndarray
    c: np.ndarray
    step_index: int = 0
    alarm_step: Optional[int] = None
    _kernel_args: tuple = field(default=(), repr=False)
    _xbuf: Optional[np.ndarray] = field(default=None, repr=False)
    _gates: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def hidden(self) -> tuple[np.ndarray, np.ndarray]:
        return self.h, self.c


def stream_reset(params: ModelParams, threshold: float = 0.5, precision: str = "f64",
                 normalize: bool = True) -> StreamState:
    """Fresh state for a new shot.

    ``normalize=False`` feeds inputs straight to the cell, for callers that
    already hold normalized values.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
    dt = PRECISIONS[precision]
    H = params.hidden_dim
    ns = params.norm_stats
    if normalize:
        mins, span, const = ns.mins.copy(), ns.span.copy(), ns.constant.copy()
    else:
        mins, span = np.zeros(N_CHANNELS), np.ones(N_CHANNELS)
        const = np.zeros(N_CHANNELS, dtype=bool)
    state = StreamState(params, threshold, precision, normalize,
                        np.zeros(H, dtype=dt), np.zeros(H, dtype=dt))
    state._kernel_args = params.astype(dt) + (mins, span, const)
    state._xbuf = np.zeros(N_CHANNELS, dtype=dt)
    state._gates = np.zeros(4 * H, dtype=dt)
    return state


def stream_step(state: StreamState, params: ModelParams, x_raw) -> tuple[float, bool]:
    """Feed one tick; returns (y, alarm raised on this tick)."""
    if params is not state.params:
        raise ValueError("stream state was reset with different parameters")
    x = x_raw if (isinstance(x_raw, np.ndarray) and x_raw.dtype == np.float64
                  and x_raw.flags.c_contiguous) else np.ascontiguousarray(x_raw, dtype=np.float64)
    if x.shape != (N_CHANNELS,):
        raise ValueError(f"expected {N_CHANNELS} channel values, got shape {x.shape}")
    y = _stream_kernel(*state._kernel_args, x, state._xbuf, state.h, state.c, state._gates)
    if y != y:
        raise ValueError(f"non-finite input at step {state.step_index}")
    alarm_now = False
    if state.alarm_step is None and y > state.threshold:
        state.alarm_step = state.step_index
        alarm_now = True
    state.step_index += 1
    return y, alarm_now


@dataclass
class ReplayResult:
    shot_id: int
    alarm_step: Optional[int]
    y: np.ndarray
    alarms: np.ndarray
    latency: LatencyStats
    dt_ms: float = 0.2
    t0_ms: float = 0.0

    def times(self) -> np.ndarray:
        return self.t0_ms + self.dt_ms * np.arange(len(self.y))

    def to_csv(self, path) -> None:
        """Columns t_ms,y,alarm where alarm is 1 from the latched step onward."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t_ms,y,alarm\n")
            for t, y, a in zip(self.times().tolist(), self.y.tolist(), self.alarms.tolist()):
                fh.write(f"{t!r},{y!r},{int(a)}\n")


def replay_shot(params: ModelParams, shot: Union[RawShot, AlignedShot],
                threshold: float = 0.5, precision: str = "f64",
                method: DecimationMethod = DecimationMethod.WindowMax) -> ReplayResult:
    """Stream a whole recorded shot tick by tick.

    Raw shots are aligned first; an already-normalized AlignedShot bypasses
    the engine's internal normalization. Only the step call is timed.
    """
    if isinstance(shot, RawShot):
        shot = align_shot(shot, method)
    state = stream_reset(params, threshold, precision, normalize=not shot.normalized)
    values = np.ascontiguousarray(shot.values, dtype=np.float64)
    T = values.shape[0]
    ys = np.empty(T)
    lat = np.empty(T)
    clock = time.perf_counter_ns
    for t in range(T):
        row = values[t]
        t0 = clock()
        y, _ = stream_step(state, params, row)
        t1 = clock()
        ys[t] = y
        lat[t] = (t1 - t0) / 1000.0
    alarms = np.zeros(T, dtype=np.int8)
    if state.alarm_step is not None:
        alarms[state.alarm_step:] = 1
    return ReplayResult(shot.shot_id, state.alarm_step, ys, alarms, LatencyStats(lat),
                        shot.dt_ms, shot.t0_ms)


def benchmark(params: ModelParams, n_steps: int = 5000, precision: str = "f32",
              seed: int = 0) -> LatencyStats:
    """Time ``n_steps`` stream steps on random raw inputs spanning the norm range."""
    rng = np.random.default_rng(seed)
    ns = params.norm_stats
    inputs = ns.mins + rng.uniform(0.0, 1.0, size=(n_steps, N_CHANNELS)) * (ns.maxs - ns.mins)
    state = stream_reset(params, 0.5, precision)
    lat = np.empty(n_steps)
    clock = time.perf_counter_ns
    for t in range(n_steps):
        row = inputs[t]
        t0 = clock()
        stream_step(state, params, row)
        lat[t] = (clock() - t0) / 1000.0
    return LatencyStats(lat)


def step_heap_growth(params: ModelParams, n_steps: int = 2000, precision: str = "f32",
                     warmup: int = WARMUP_STEPS) -> dict:
    """Heap usage of the stream step after warm-up, measured with tracemalloc.

    Returns the net bytes retained over ``n_steps`` steps, the number of live
    numpy data buffers created by them, and the largest transient excess
    over the pre-loop baseline (``peak_excess``).
    """
    rng = np.random.default_rng(1)
    ns = params.norm_stats
    inputs = ns.mins + rng.uniform(0.0, 1.0, size=(n_steps + warmup, N_CHANNELS)) \
        * (ns.maxs - ns.mins)
    rows = [inputs[i] for i in range(len(inputs))]
    state = stream_reset(params, 0.5, precision)
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    try:
        # warm up under tracing too, so one-time lazy allocations triggered by
        # the tracer itself land before the baseline
        for i in range(warmup):
            stream_step(state, params, rows[i])
        domain = np.lib.tracemalloc_domain
        before = tracemalloc.take_snapshot()
        base, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        for i in range(warmup, warmup + n_steps):
            stream_step(state, params, rows[i])
        cur, peak = tracemalloc.get_traced_memory()
        after = tracemalloc.take_snapshot()
    finally:
        if not was_tracing:
            tracemalloc.stop()
    flt = [tracemalloc.DomainFilter(True, domain)]
    np_before = sum(s.size for s in before.filter_traces(flt).statistics("filename"))
    np_after = sum(s.size for s in after.filter_traces(flt).statistics("filename"))
    return {"net_bytes": cur - base, "numpy_bytes": np_after - np_before,
            "peak_excess": peak - base, "steps": n_steps}
