"""Stateful LSTM cell with a sigmoid output head, trained by full BPTT.

Gate blocks are stored stacked in the order input, forget, candidate,
output: ``W`` is (4H, D), ``U`` is (4H, H), ``b`` is (4H,). Row-major bytes
of the stacked matrix are exactly W_i, W_f, W_g, W_o one after another,
which is also the weight-file order.

The per-step arithmetic lives in numba kernels. Batch forward and the stream
engine both call ``_cell_step`` so their outputs agree bit for bit.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numba
import numpy as np

from .errors import ChecksumError, DimensionMismatchError, VersionMismatchError, WeightFileError
from .preprocess import NormStats
from .signal_model import N_CHANNELS, AlignedShot

INPUT_DIM = N_CHANNELS
DEFAULT_HIDDEN = 32

MAGIC = b"TKGW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIq")  # magic, version, hidden_dim, seed (-1 = unknown)
_CHECKSUM_BYTES = 8

PARAM_NAMES = ("W", "U", "b", "w_y", "b_y")


def identity_norm() -> NormStats:
    return NormStats(np.zeros(N_CHANNELS), np.ones(N_CHANNELS))


@dataclass(eq=False)
class ModelParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    w_y: np.ndarray
    b_y: float
    norm_stats: NormStats = field(default_factory=identity_norm)
    seed: Optional[int] = None

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        self.w_y = np.ascontiguousarray(self.w_y, dtype=np.float64)
        self.b_y = float(self.b_y)
        H = self.hidden_dim
        if (self.W.shape != (4 * H, INPUT_DIM) or self.U.shape != (4 * H, H)
                or self.b.shape != (4 * H,) or self.w_y.shape != (H,)):
            raise ValueError(
                f"inconsistent parameter shapes W{self.W.shape} U{self.U.shape} "
                f"b{self.b.shape} w_y{self.w_y.shape}"
            )

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    def block(self, name: str) -> np.ndarray:
        """One gate block by its conventional name, e.g. ``"W_f"`` or ``"b_o"``."""
        kind, gate = name.split("_")
        k = "ifgo".index(gate)
        H = self.hidden_dim
        return getattr(self, kind)[k * H:(k + 1) * H]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b, "w_y": self.w_y,
                "b_y": np.array([self.b_y])}

    def copy(self) -> "ModelParams":
        return ModelParams(self.W.copy(), self.U.copy(), self.b.copy(), self.w_y.copy(),
                           self.b_y, self.norm_stats, self.seed)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def equals(self, other: "ModelParams") -> bool:
        return (all(np.array_equal(a, b) for a, b in
                    zip(self.arrays().values(), other.arrays().values()))
                and self.norm_stats == other.norm_stats)

    def astype(self, dtype) -> tuple:
        """Kernel-ready tuple (W, U, b, w_y, b_y) in the requested precision."""
        dt = np.dtype(dtype)
        return (self.W.astype(dt), self.U.astype(dt), self.b.astype(dt),
                self.w_y.astype(dt), dt.type(self.b_y))


def _glorot(rng: np.random.Generator, shape, fan_in, fan_out) -> np.ndarray:
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def init_params(hidden_dim: int = DEFAULT_HIDDEN, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights per gate block, forget bias 1, other biases 0."""
    if hidden_dim < 1:
        raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
    H, D = hidden_dim, INPUT_DIM
    rng = np.random.default_rng(seed)
    W = np.concatenate([_glorot(rng, (H, D), D, H) for _ in range(4)])
    U = np.concatenate([_glorot(rng, (H, H), H, H) for _ in range(4)])
    w_y = _glorot(rng, (H,), H, 1)
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return ModelParams(W, U, b, w_y, 0.0, seed=seed)


def zero_params(hidden_dim: int = DEFAULT_HIDDEN) -> ModelParams:
    H = hidden_dim
    return ModelParams(np.zeros((4 * H, INPUT_DIM)), np.zeros((4 * H, H)),
                       np.zeros(4 * H), np.zeros(H), 0.0)


# --- kernels ----------------------------------------------------------------

@numba.njit(cache=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _cell_step(W, U, b, wy, by, x, h, c, gates):
    """Advance (h, c) in place by one input vector; returns the logit of y.

    ``gates`` receives the activated i, f, g, o values. All of W x + U h is
    computed before h is overwritten, so h and c may be updated in place.
    """
    H = h.shape[0]
    D = x.shape[0]
    for j in range(4 * H):
        acc = b[j]
        for k in range(D):
            acc += W[j, k] * x[k]
        for k in range(H):
            acc += U[j, k] * h[k]
        gates[j] = acc
    for j in range(H):
        ig = _sigmoid(gates[j])
        fg = _sigmoid(gates[H + j])
        gg = math.tanh(gates[2 * H + j])
        og = _sigmoid(gates[3 * H + j])
        gates[j] = ig
        gates[H + j] = fg
        gates[2 * H + j] = gg
        gates[3 * H + j] = og
        cj = fg * c[j] + ig * gg
        c[j] = cj
        h[j] = og * math.tanh(cj)
    z = by
    for j in range(H):
        z += wy[j] * h[j]
    return z


@numba.njit(cache=True)
def _forward_seq(W, U, b, wy, by, X, gates, hs, cs, logits, ys):
    T = X.shape[0]
    H = hs.shape[1]
    h = np.zeros(H, dtype=X.dtype)
    c = np.zeros(H, dtype=X.dtype)
    for t in range(T):
        z = _cell_step(W, U, b, wy, by, X[t], h, c, gates[t])
        hs[t + 1] = h
        cs[t + 1] = c
        logits[t] = z
        ys[t] = _sigmoid(z)


@numba.njit(cache=True)
def _bptt(W, U, wy, X, gates, hs, cs, dlogit, dW, dU, db, dwy):
    T = X.shape[0]
    H = hs.shape[1]
    D = X.shape[1]
    dh = np.zeros(H)
    dc = np.zeros(H)
    dz = np.zeros(4 * H)
    dby = 0.0
    for t in range(T - 1, -1, -1):
        g = dlogit[t]
        dby += g
        for j in range(H):
            dwy[j] += g * hs[t + 1, j]
            dh[j] += g * wy[j]
        for j in range(H):
            ig = gates[t, j]
            fg = gates[t, H + j]
            gg = gates[t, 2 * H + j]
            og = gates[t, 3 * H + j]
            tc = math.tanh(cs[t + 1, j])
            dcj = dc[j] + dh[j] * og * (1.0 - tc * tc)
            dz[j] = dcj * gg * ig * (1.0 - ig)
            dz[H + j] = dcj * cs[t, j] * fg * (1.0 - fg)
            dz[2 * H + j] = dcj * ig * (1.0 - gg * gg)
            dz[3 * H + j] = dh[j] * tc * og * (1.0 - og)
            dc[j] = dcj * fg
        for k in range(H):
            dh[k] = 0.0
        for j in range(4 * H):
            dzj = dz[j]
            db[j] += dzj
            for k in range(D):
                dW[j, k] += dzj * X[t, k]
            for k in range(H):
                dU[j, k] += dzj * hs[t, k]
                dh[k] += U[j, k] * dzj
    return dby


# --- python surface ---------------------------------------------------------

@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_dim: int, dtype=np.float64) -> "CellState":
        return cls(np.zeros(hidden_dim, dtype=dtype), np.zeros(hidden_dim, dtype=dtype))

    def copy(self) -> "CellState":
        return CellState(self.h.copy(), self.c.copy())


def sigmoid(z):
    return _sigmoid(z)


def step(params: ModelParams, state: CellState, x) -> tuple[CellState, float]:
    """One recurrence step on a normalized input vector; returns (new state, y)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ValueError(f"input must have shape ({params.input_dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input vector")
    new = state.copy()
    gates = np.empty(4 * params.hidden_dim)
    z = _cell_step(params.W, params.U, params.b, params.w_y, params.b_y,
                   x, new.h, new.c, gates)
    return new, _sigmoid(z)


@dataclass
class ForwardCache:
    shot_id: int
    X: np.ndarray
    gates: np.ndarray
    hs: np.ndarray
    cs: np.ndarray
    logits: np.ndarray
    y: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.X.shape[0]


def _shot_inputs(shot) -> tuple[int, np.ndarray]:
    if isinstance(shot, AlignedShot):
        return shot.shot_id, np.ascontiguousarray(shot.values, dtype=np.float64)
    return -1, np.ascontiguousarray(np.asarray(shot, dtype=np.float64).reshape(-1, INPUT_DIM))


def forward_sequence(params: ModelParams, shot) -> tuple[np.ndarray, ForwardCache]:
    """Run the cell over every step from a zero state.

    ``shot`` is a normalized AlignedShot or a (T, 10) array of normalized
    inputs.
    """
    shot_id, X = _shot_inputs(shot)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"shot {shot_id}: non-finite input")
    T, H = X.shape[0], params.hidden_dim
    gates = np.empty((T, 4 * H))
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    logits = np.empty(T)
    ys = np.empty(T)
    if T:
        _forward_seq(params.W, params.U, params.b, params.w_y, params.b_y,
                     X, gates, hs, cs, logits, ys)
    cache = ForwardCache(shot_id, X, gates, hs, cs, logits, ys)
    return ys, cache


def bce_logit_grad(logits: np.ndarray, label: np.ndarray, pos_weight: float = 1.0) -> np.ndarray:
    """d(mean weighted BCE)/d(logit) per step."""
    T = len(logits)
    if T == 0:
        return np.zeros(0)
    y = np.array([_sigmoid(z) for z in logits])
    lab = np.asarray(label, dtype=np.float64)
    return (pos_weight * lab * (y - 1.0) + (1.0 - lab) * y) / T


@dataclass
class Gradients:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    w_y: np.ndarray
    b_y: float

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "U": self.U, "b": self.b, "w_y": self.w_y,
                "b_y": np.array([self.b_y])}

    def global_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(a * a)) for a in self.arrays().values()))

    def scale(self, factor: float) -> None:
        self.W *= factor
        self.U *= factor
        self.b *= factor
        self.w_y *= factor
        self.b_y *= factor


def bptt(params: ModelParams, shot, cache: ForwardCache, pos_weight: float = 1.0,
         label=None) -> Gradients:
    """Exact gradient of the mean weighted BCE of one shot.

    ``label`` defaults to ``shot.label``.
    """
    shot_id, X = _shot_inputs(shot)
    if label is None:
        label = getattr(shot, "label", None)
    if label is None:
        raise ValueError(f"shot {shot_id} has no label")
    H = params.hidden_dim
    if (cache.n_steps != X.shape[0] or cache.shot_id != shot_id
            or cache.hs.shape[1] != H or not np.array_equal(cache.X, X)):
        raise ValueError(f"forward cache does not belong to shot {shot_id}")
    if len(label) != X.shape[0]:
        raise ValueError("label length does not match the shot")
    dW = np.zeros_like(params.W)
    dU = np.zeros_like(params.U)
    db = np.zeros_like(params.b)
    dwy = np.zeros_like(params.w_y)
    if X.shape[0] == 0:
        return Gradients(dW, dU, db, dwy, 0.0)
    dlogit = bce_logit_grad(cache.logits, label, pos_weight)
    dby = _bptt(params.W, params.U, params.w_y, X, cache.gates, cache.hs, cache.cs,
                dlogit, dW, dU, db, dwy)
    return Gradients(dW, dU, db, dwy, float(dby))


# --- weight file ------------------------------------------------------------

def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_CHECKSUM_BYTES).digest()


def params_to_bytes(params: ModelParams) -> bytes:
    seed = -1 if params.seed is None else int(params.seed)
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, params.hidden_dim, seed)]
    for arr in (params.W, params.U, params.b, params.w_y, np.array([params.b_y])):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    ns = params.norm_stats
    parts.append(np.column_stack([ns.mins, ns.maxs]).astype("<f8").tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


def params_from_bytes(data: bytes) -> ModelParams:
    if len(data) < _HEADER.size + _CHECKSUM_BYTES:
        raise ChecksumError(f"weight file too short ({len(data)} bytes)")
    magic, version, H, seed = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise WeightFileError(f"not a weight file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"weight file version {version}, this build reads version {FORMAT_VERSION}"
        )
    body, stored = data[:-_CHECKSUM_BYTES], data[-_CHECKSUM_BYTES:]
    if _checksum(body) != stored:
        raise ChecksumError("weight file checksum mismatch (truncated or corrupt)")
    D = INPUT_DIM
    n_floats = 4 * H * D + 4 * H * H + 4 * H + H + 1 + 2 * N_CHANNELS
    payload = body[_HEADER.size:]
    if H < 1 or len(payload) != 8 * n_floats:
        raise DimensionMismatchError(
            f"hidden_dim {H} implies {8 * n_floats} payload bytes, file has {len(payload)}"
        )
    vals = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    pos = 0

    def take(n, shape):
        nonlocal pos
        out = vals[pos:pos + n].reshape(shape).copy()
        pos += n
        return out

    W = take(4 * H * D, (4 * H, D))
    U = take(4 * H * H, (4 * H, H))
    b = take(4 * H, (4 * H,))
    w_y = take(H, (H,))
    b_y = take(1, (1,))[0]
    mm = take(2 * N_CHANNELS, (N_CHANNELS, 2))
    return ModelParams(W, U, b, w_y, b_y, NormStats(mm[:, 0], mm[:, 1]),
                       seed=None if seed < 0 else seed)


def save_params(params: ModelParams, path) -> Path:
    path = Path(path)
    path.write_bytes(params_to_bytes(params))
    return path


def load_params(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())


def weights_checksum(path) -> str:
    return Path(path).read_bytes()[-_CHECKSUM_BYTES:].hex()
