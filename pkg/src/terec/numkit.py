"""Dense numeric kernels, seeded randomness and the Adam optimizer.

Parameters are stored as float32 arrays; every kernel here accumulates in
float64 and only narrows when writing back into a stored tensor. Gradient
checks pass float64 arrays through the same code paths.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError

STORAGE_DTYPE = np.float32
DEFAULT_INIT_SCALE = 0.05


class SeededRng:
    """Counter-based (Philox) generator with named, reproducible child streams.

    ``SeededRng(7).child("sampler")`` always yields the same stream, no matter
    how much the parent has been consumed, so components can be reseeded
    independently without coupling their draw order.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, name: str) -> "SeededRng":
        return SeededRng(self.seed, self.path + (zlib.crc32(name.encode("utf-8")),))

    def random(self, size=None):
        return self.gen.random(size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def permutation(self, x):
        return self.gen.permutation(x)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self.path})"


def matvec(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Return ``w @ x`` accumulated in float64."""
    w = np.asarray(w)
    x = np.asarray(x)
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: cannot multiply matrix {w.shape} by vector {x.shape}")
    return w.astype(np.float64) @ x.astype(np.float64)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x):
    """Logistic function, stable for large ``|x|``; scalar in, scalar out."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.item() if out.ndim == 0 else out


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out.item() if out.ndim == 0 else out


def log_sigmoid(x):
    return -softplus(-np.asarray(x, dtype=np.float64))


def init_uniform(rows: int, cols: int, scale: float, rng: SeededRng,
                 dtype=STORAGE_DTYPE) -> np.ndarray:
    if scale <= 0:
        raise ValueError(f"init scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, size=(rows, cols)).astype(dtype)


def dropout_mask(shape, rate: float, rng: SeededRng) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``.

    ``rate == 1`` gives the all-zero mask. Draws are consumed even for
    ``rate`` 0 or 1 so the rng stream does not depend on the rate.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {rate}")
    u = rng.random(shape)
    if rate >= 1.0:
        return np.zeros(np.shape(u))
    return (u >= rate) / (1.0 - rate)


@dataclass
class AdamState:
    """Moment accumulators for one tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_tensor(cls, param: np.ndarray, learning_rate: float = 0.001, **kw) -> "AdamState":
        return cls(np.zeros(param.shape), np.zeros(param.shape),
                   learning_rate=learning_rate, **kw)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
              name: str = "tensor") -> np.ndarray:
    """Apply one bias-corrected Adam update to ``param`` in place."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(
            f"adam_step[{name}]: param {param.shape}, grad {grad.shape}, "
            f"state {state.m.shape} do not conform")
    g = np.asarray(grad, dtype=np.float64)
    bad = ~np.isfinite(g)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteError(f"non-finite gradient in {name} at index {idx}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * g
    state.v *= b2
    state.v += (1.0 - b2) * g * g
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    param[...] = (param.astype(np.float64) - update).astype(param.dtype)
    return param


@dataclass
class Adam:
    """Adam over a fixed set of named tensors, updated in place."""

    params: dict[str, np.ndarray]
    learning_rate: float = 0.001
    states: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states[name] = AdamState.for_tensor(p, self.learning_rate)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        # a fixed key order keeps error reporting deterministic
        for name in sorted(self.params):
            adam_step(self.params[name], grads[name], self.states[name], name)
