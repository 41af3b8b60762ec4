import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quenchwatch.nn_core import forward_sequence, init_params, zero_params
from quenchwatch.pipeline import build_dataset, prepare_aligned
from quenchwatch.preprocess import NormStats
from quenchwatch.signal_model import AlignedShot
from quenchwatch.stream_engine import (
    LatencyStats,
    benchmark,
    replay_shot,
    step_heap_growth,
    stream_reset,
    stream_step,
)
from quenchwatch.training import TrainConfig, train


@pytest.fixture(scope="module")
def dataset(small_corpus):
    shots, _ = small_corpus
    return build_dataset(prepare_aligned(shots), seed=7)


@pytest.fixture(scope="module")
def trained(dataset):
    params, _ = train(dataset.shots("train"), TrainConfig(epochs=15, hidden_dim=16),
                      dataset.stats)
    return params


@pytest.mark.parametrize("thr", [0.0, 1.0, -0.1, 1.5])
def test_threshold_range(thr):
    with pytest.raises(ValueError):
        stream_reset(init_params(4, 0), thr)


def test_bad_precision():
    with pytest.raises(ValueError):
        stream_reset(init_params(4, 0), 0.5, precision="f16")


def test_saturated_output_alarms_at_zero(rng):
    p = zero_params(4)
    p.b_y = 10.0
    s = stream_reset(p, 0.5)
    y, alarm = stream_step(s, p, rng.normal(size=10))
    assert alarm and s.alarm_step == 0 and y > 0.99


def test_never_alarms_when_low(rng):
    p = zero_params(4)
    p.b_y = -10.0
    s = stream_reset(p, 0.5)
    for _ in range(50):
        stream_step(s, p, rng.normal(size=10))
    assert s.alarm_step is None


def test_alarm_latches(rng):
    p = zero_params(4)
    p.b_y = 10.0
    s = stream_reset(p, 0.5)
    flags = [stream_step(s, p, rng.normal(size=10))[1] for _ in range(5)]
    p.b_y = -10.0  # kernel args were captured at reset, so output stays high
    assert flags == [True, False, False, False, False]
    assert s.alarm_step == 0


def test_non_finite_leaves_state(rng):
    p = init_params(6, 0)
    s = stream_reset(p)
    stream_step(s, p, rng.normal(size=10))
    h, c, k = s.h.copy(), s.c.copy(), s.step_index
    with pytest.raises(ValueError):
        stream_step(s, p, np.r_[rng.normal(size=9), np.nan])
    assert np.array_equal(h, s.h) and np.array_equal(c, s.c) and s.step_index == k


def test_wrong_shape_or_params(rng):
    p = init_params(4, 0)
    s = stream_reset(p)
    with pytest.raises(ValueError):
        stream_step(s, p, np.zeros(9))
    with pytest.raises(ValueError):
        stream_step(s, p.copy(), np.zeros(10))


def test_replay_matches_batch_bitwise(dataset, trained):
    for shot in dataset.shots("test"):
        res = replay_shot(trained, dataset.raw[shot.shot_id])
        y, _ = forward_sequence(trained, shot)
        assert np.array_equal(res.y, y)
        assert len(res.latency.samples_us) == shot.n_steps


def test_replay_normalized_input_bypasses_norm(dataset, trained):
    shot = dataset.shots("test")[0]
    a = replay_shot(trained, shot)
    b = replay_shot(trained, dataset.raw[shot.shot_id])
    assert np.array_equal(a.y, b.y)


def test_replay_raw_shot(small_corpus, dataset, trained):
    raw = small_corpus[0][0]
    a = replay_shot(trained, raw)
    b = replay_shot(trained, dataset.raw[raw.shot_id])
    assert np.array_equal(a.y, b.y)


def test_f32_close_to_f64(dataset, trained):
    for shot in dataset.shots("test"):
        a = replay_shot(trained, shot, precision="f32")
        b = replay_shot(trained, shot, precision="f64")
        assert np.max(np.abs(a.y - b.y)) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(lo=st.floats(0.01, 0.98), gap=st.floats(0.001, 0.5), seed=st.integers(0, 1000))
def test_higher_threshold_never_alarms_earlier(lo, gap, seed):
    hi = min(lo + gap, 0.99)
    rng = np.random.default_rng(seed)
    p = init_params(6, seed)
    p.b_y = rng.normal(0, 2)
    X = rng.uniform(0, 1, (80, 10))
    a = replay_shot(p, _norm_shot(X), lo)
    b = replay_shot(p, _norm_shot(X), hi)
    assert np.array_equal(a.y, b.y)
    if b.alarm_step is not None:
        assert a.alarm_step is not None and a.alarm_step <= b.alarm_step


def _norm_shot(X):
    return AlignedShot(0, X, normalized=True)


def test_replay_csv(tmp_path, dataset, trained):
    res = replay_shot(trained, dataset.shots("test")[0], threshold=0.3)
    path = tmp_path / "r.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_ms,y,alarm"
    assert len(lines) == 501
    alarms = [int(l.split(",")[2]) for l in lines[1:]]
    if res.alarm_step is not None:
        assert alarms.index(1) == res.alarm_step and all(alarms[res.alarm_step:])
    else:
        assert not any(alarms)


def test_latency_stats_skip_warmup():
    s = LatencyStats(np.r_[np.full(10, 1000.0), np.arange(1.0, 101.0)])
    assert s.max == 100.0
    assert s.p50 == pytest.approx(50.5)
    assert s.summary_line().count(",") == 2


def test_benchmark_runs():
    stats = benchmark(init_params(8, 0), n_steps=200)
    assert len(stats.samples_us) == 200 and stats.p50 > 0


def test_heap_growth_bounded():
    p = init_params(16, 0)
    p.norm_stats = NormStats(np.zeros(10), np.ones(10))
    step_heap_growth(p, n_steps=200, warmup=100)  # absorbs one-time allocations
    short = step_heap_growth(p, n_steps=1000, warmup=100)
    long = step_heap_growth(p, n_steps=8000, warmup=100)
    assert short["numpy_bytes"] == long["numpy_bytes"] == 0
    assert abs(long["net_bytes"] - short["net_bytes"]) <= 64

