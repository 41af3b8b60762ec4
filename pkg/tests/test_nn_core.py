import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_worst_error, lstm_step_reference, lstm_step_scalar
from quenchwatch.errors import ChecksumError, DimensionMismatchError, VersionMismatchError
from quenchwatch.nn_core import (
    CellState,
    ModelParams,
    _checksum,
    bptt,
    forward_sequence,
    init_params,
    load_params,
    params_from_bytes,
    params_to_bytes,
    save_params,
    step,
    zero_params,
)
from quenchwatch.preprocess import NormStats
from quenchwatch.signal_model import AlignedShot
from quenchwatch.training import shot_loss_from_logits

GATES = "ifgo"


def random_params(rng, H=6, scale=0.8):
    return ModelParams(rng.normal(0, scale, (4 * H, 10)), rng.normal(0, scale, (4 * H, H)),
                       rng.normal(0, scale, 4 * H), rng.normal(0, scale, H), rng.normal())


def random_shot(rng, T=20, shot_id=1):
    X = rng.uniform(-0.2, 1.2, (T, 10))
    label = (np.arange(T) >= rng.integers(1, T)).astype(np.int8)
    return AlignedShot(shot_id, X, label=label, normalized=True)


def test_init_is_deterministic():
    a, b = init_params(32, 9), init_params(32, 9)
    assert params_to_bytes(a) == params_to_bytes(b)
    assert params_to_bytes(a) != params_to_bytes(init_params(32, 10))


def test_init_shapes_and_biases():
    p = init_params(32, 0)
    assert p.block("W_i").shape == (32, 10)
    assert p.block("U_i").shape == (32, 32)
    assert np.all(p.block("b_f") == 1.0)
    for g in "igo":
        assert np.all(p.block(f"b_{g}") == 0.0)
    assert p.b_y == 0.0
    assert np.all(np.abs(p.block("W_g")) <= math.sqrt(6 / 42))
    assert np.all(np.abs(p.block("U_o")) <= math.sqrt(6 / 64))
    assert np.all(np.abs(p.w_y) <= math.sqrt(6 / 33))


def test_init_rejects_zero_hidden():
    with pytest.raises(ValueError):
        init_params(0, 1)


def test_zero_params_give_half(rng):
    _, y = step(zero_params(8), CellState.zeros(8), rng.normal(size=10))
    assert y == 0.5


def test_bias_only_closed_form(rng):
    p = zero_params(5)
    p.b[:] = rng.normal(size=20)
    p.b_y = 0.7
    new, y = step(p, CellState.zeros(5), np.zeros(10))
    sig = lambda z: 1 / (1 + np.exp(-z))
    assert y == pytest.approx(sig(0.7), rel=1e-15)
    np.testing.assert_allclose(new.c, sig(p.block("b_i")) * np.tanh(p.block("b_g")), rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_step_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H=7)
    state = CellState(rng.uniform(-1, 1, 7), rng.normal(size=7))
    x = rng.normal(size=10)
    new, y = step(p, state, x)
    h1, c1, y1 = lstm_step_scalar(p.W, p.U, p.b, p.w_y, p.b_y, x, state.h, state.c)
    np.testing.assert_allclose(new.h, h1, rtol=1e-12, atol=0)
    np.testing.assert_allclose(new.c, c1, rtol=1e-12, atol=0)
    assert y == pytest.approx(y1, rel=1e-12)
    blocks = [p.block(f"{k}_{g}") for k in "WUb" for g in GATES]
    h2, c2, y2 = lstm_step_reference(*blocks, p.w_y, p.b_y, x, state.h, state.c)
    np.testing.assert_allclose(new.h, h2, rtol=1e-12)
    assert y == pytest.approx(y2, rel=1e-12)


def test_step_rejects_non_finite():
    with pytest.raises(ValueError):
        step(zero_params(3), CellState.zeros(3), np.r_[np.inf, np.zeros(9)])


def test_step_does_not_mutate_input_state(rng):
    p = random_params(rng)
    s = CellState(np.zeros(6), np.zeros(6))
    step(p, s, rng.normal(size=10))
    assert not s.h.any() and not s.c.any()


def test_forward_empty():
    y, cache = forward_sequence(init_params(4, 0), np.zeros((0, 10)))
    assert y.shape == (0,) and cache.n_steps == 0


def test_forward_equals_repeated_step(rng):
    p = random_params(rng)
    shot = random_shot(rng, T=30)
    y, _ = forward_sequence(p, shot)
    state = CellState.zeros(p.hidden_dim)
    manual = []
    for x in shot.values:
        state, yt = step(p, state, x)
        manual.append(yt)
    assert y.tolist() == manual


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(1, 60), scale=st.floats(0.1, 5.0))
def test_state_bounds(seed, T, scale):
    rng = np.random.default_rng(seed)
    p = random_params(rng, H=5, scale=scale)
    y, cache = forward_sequence(p, rng.normal(0, 3 * scale, (T, 10)))
    assert np.all((y > 0) & (y < 1)) or scale > 3  # saturation can round to 0/1 at extreme scale
    assert np.all(np.abs(cache.hs) <= 1.0)
    for t in range(1, T + 1):
        assert np.all(np.abs(cache.cs[t]) <= t)


def loss_of(p, shot, pos_weight=1.0):
    _, cache = forward_sequence(p, shot)
    return shot_loss_from_logits(cache.logits, shot.label, pos_weight)


def fd_check(p, shot, rng, n=25, pos_weight=1.0):
    _, cache = forward_sequence(p, shot)
    grads = bptt(p, shot, cache, pos_weight)
    return fd_worst_error(lambda q: loss_of(q, shot, pos_weight), p, grads.arrays(), rng, n)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check(seed):
    rng = np.random.default_rng(100 + seed)
    p = init_params(8, seed)
    shot = random_shot(rng, T=20)
    assert fd_check(p, shot, rng) <= 1e-4


def test_gradient_check_with_pos_weight(rng):
    p = init_params(6, 1)
    assert fd_check(p, random_shot(rng), rng, pos_weight=3.0) <= 1e-4


def test_bptt_zero_length():
    p = init_params(4, 0)
    shot = AlignedShot(0, np.zeros((0, 10)), label=np.zeros(0), normalized=True)
    _, cache = forward_sequence(p, shot)
    g = bptt(p, shot, cache)
    assert g.global_norm() == 0.0


def test_bptt_rejects_foreign_cache(rng):
    p = init_params(4, 0)
    a, b = random_shot(rng, 20, 1), random_shot(rng, 20, 2)
    _, cache = forward_sequence(p, a)
    with pytest.raises(ValueError):
        bptt(p, b, cache)
    c = AlignedShot(1, a.values[:10], label=a.label[:10], normalized=True)
    with pytest.raises(ValueError):
        bptt(p, c, cache)


def test_hidden_permutation_symmetry(rng):
    H = 6
    p = random_params(rng, H)
    shot = random_shot(rng, 25)
    perm = rng.permutation(H)
    rows = np.concatenate([perm + k * H for k in range(4)])
    q = ModelParams(p.W[rows], p.U[rows][:, perm], p.b[rows], p.w_y[perm], p.b_y)
    assert loss_of(q, shot) == pytest.approx(loss_of(p, shot), rel=1e-12)
    _, cp = forward_sequence(p, shot)
    _, cq = forward_sequence(q, shot)
    gp, gq = bptt(p, shot, cp), bptt(q, shot, cq)
    np.testing.assert_allclose(gq.W, gp.W[rows], rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(gq.U, gp.U[rows][:, perm], rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(gq.w_y, gp.w_y[perm], rtol=1e-9, atol=1e-14)
    assert gq.b_y == pytest.approx(gp.b_y, rel=1e-9)


def test_weight_file_round_trip(tmp_path):
    p = init_params(32, 4)
    p.norm_stats = NormStats(np.arange(10.0), np.arange(10.0) + 2.5)
    path = save_params(p, tmp_path / "w.bin")
    q = load_params(path)
    assert q.equals(p) and q.seed == 4 and q.hidden_dim == 32
    assert params_to_bytes(q) == path.read_bytes()


def test_weight_file_layout(tmp_path):
    p = init_params(3, 2)
    data = params_to_bytes(p)
    magic, version, hidden, seed = struct.unpack_from("<4sIIq", data)
    assert (magic, version, hidden, seed) == (b"TKGW", 1, 3, 2)
    first = struct.unpack_from("<d", data, 20)[0]
    assert first == p.block("W_i")[0, 0]
    # W_f follows W_i directly
    assert struct.unpack_from("<d", data, 20 + 8 * 30)[0] == p.block("W_f")[0, 0]
    n = 4 * 3 * 10 + 4 * 9 + 12 + 3 + 1 + 20
    assert len(data) == 20 + 8 * n + 8


def test_truncated_file_is_checksum_error(tmp_path):
    data = params_to_bytes(init_params(8, 0))
    path = tmp_path / "t.bin"
    path.write_bytes(data[:-40])
    with pytest.raises(ChecksumError):
        load_params(path)


def test_flipped_bit_is_checksum_error():
    data = bytearray(params_to_bytes(init_params(8, 0)))
    data[100] ^= 1
    with pytest.raises(ChecksumError):
        params_from_bytes(bytes(data))


def test_version_mismatch():
    data = bytearray(params_to_bytes(init_params(4, 0)))
    struct.pack_into("<I", data, 4, 2)
    body = bytes(data[:-8])
    with pytest.raises(VersionMismatchError):
        params_from_bytes(body + _checksum(body))


def test_dimension_mismatch():
    data = bytearray(params_to_bytes(init_params(4, 0)))
    struct.pack_into("<I", data, 8, 5)
    body = bytes(data[:-8])
    with pytest.raises(DimensionMismatchError):
        params_from_bytes(body + _checksum(body))


def test_hidden_dim_comes_from_file(tmp_path):
    path = save_params(init_params(16, 1), tmp_path / "w16.bin")
    assert load_params(path).hidden_dim == 16
