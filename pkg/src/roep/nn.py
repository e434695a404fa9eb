"""Minimal differentiable-computation core (64-bit, CPU, no autodiff).

Layers are plain functions with explicit forward/backward pairs; all
model parameters live in one flat float64 buffer (values, gradients and
Adam moments alike) so the optimizer touches a handful of arrays per
step.  Every backward pass here is verified against central finite
differences by the test suite.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BCE_EPS = 1e-12

CHECKPOINT_MAGIC = b"ROEP"
CHECKPOINT_VERSION = 1


class Parameters:
    """Named parameter tensors backed by flat value/grad/moment buffers."""

    def __init__(self):
        self._layout: "OrderedDict[str, tuple[int, int, tuple[int, ...]]]" = OrderedDict()
        self._pending: list[tuple[str, np.ndarray]] = []
        self.values: np.ndarray | None = None
        self.grads: np.ndarray | None = None
        self.adam_m: np.ndarray | None = None
        self.adam_v: np.ndarray | None = None
        self.adam_t = 0
        self._scratch: np.ndarray | None = None
        self._value_views: dict[str, np.ndarray] = {}
        self._grad_views: dict[str, np.ndarray] = {}

    def add(self, name: str, init: np.ndarray) -> None:
        if self.values is not None:
            raise RuntimeError("parameters already built")
        if name in self._layout or any(n == name for n, _ in self._pending):
            raise ValueError(f"duplicate parameter name: {name}")
        self._pending.append((name, np.asarray(init, dtype=np.float64)))

    def build(self) -> "Parameters":
        offset = 0
        for name, arr in self._pending:
            self._layout[name] = (offset, offset + arr.size, arr.shape)
            offset += arr.size
        self.values = np.empty(offset)
        self.grads = np.zeros(offset)
        self.adam_m = np.zeros(offset)
        self.adam_v = np.zeros(offset)
        self._scratch = np.empty(offset)
        self._value_views = {n: self._view(self.values, n) for n in self._layout}
        self._grad_views = {n: self._view(self.grads, n) for n in self._layout}
        for name, arr in self._pending:
            self._value_views[name][...] = arr
        self._pending.clear()
        return self

    def names(self) -> list[str]:
        return list(self._layout)

    def _view(self, buf: np.ndarray, name: str) -> np.ndarray:
        lo, hi, shape = self._layout[name]
        return buf[lo:hi].reshape(shape)

    def value(self, name: str) -> np.ndarray:
        return self._value_views[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grad_views[name]

    def moment_m(self, name: str) -> np.ndarray:
        return self._view(self.adam_m, name)

    def moment_v(self, name: str) -> np.ndarray:
        return self._view(self.adam_v, name)

    def zero_grads(self) -> None:
        self.grads[:] = 0.0

    def copy_values(self) -> np.ndarray:
        return self.values.copy()


def adam_step(
    params: Parameters,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam update over all parameters; zeroes grads."""
    params.adam_t += 1
    g = params.grads
    m, v = params.adam_m, params.adam_v
    m *= beta1
    m += (1.0 - beta1) * g
    g *= g  # grads double as scratch for g^2; zeroed below anyway
    v *= beta2
    v += (1.0 - beta2) * g
    # values -= lr * m_hat / (sqrt(v_hat) + eps), folded into scalars
    scale_m = lr / (1.0 - beta1**params.adam_t)
    inv_s2 = 1.0 / np.sqrt(1.0 - beta2**params.adam_t)
    s = params._scratch
    np.sqrt(v, out=s)
    s *= inv_s2
    s += eps
    np.divide(m, s, out=s)
    s *= scale_m
    params.values -= s
    params.zero_grads()


def affine_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


# ---------------------------------------------------------------------------
# Layer primitives

def affine_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ValueError(f"affine shape mismatch: W{W.shape} b{b.shape} x{x.shape}")
    return W @ x + b


def affine_backward(dy: np.ndarray, W: np.ndarray, x: np.ndarray):
    """Gradients (dW, db, dx) of y = Wx + b given upstream dy."""
    return np.outer(dy, x), dy, W.T @ dy


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, dy, 0.0)


def recurrent_cell_forward(
    W_m: np.ndarray, W_c: np.ndarray, b: np.ndarray, m_prev: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """m_t = ReLU(W_m m_prev + W_c c + b); returns (m_t, pre-activation)."""
    if W_m.shape[1] != m_prev.shape[0] or W_c.shape[1] != c.shape[0]:
        raise ValueError("recurrent cell shape mismatch")
    pre = W_m @ m_prev + W_c @ c + b
    return np.maximum(pre, 0.0), pre


def recurrent_cell_backward(
    dm: np.ndarray,
    pre: np.ndarray,
    W_m: np.ndarray,
    W_c: np.ndarray,
    m_prev: np.ndarray,
    c: np.ndarray,
):
    """Gradients (dW_m, dW_c, db, dm_prev, dc) through the cell."""
    dpre = np.where(pre > 0.0, dm, 0.0)
    return (
        np.outer(dpre, m_prev),
        np.outer(dpre, c),
        dpre,
        W_m.T @ dpre,
        W_c.T @ dpre,
    )


# ---------------------------------------------------------------------------
# Heads and losses

def softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_categorical(
    logits: np.ndarray, rng: np.random.Generator
) -> tuple[int, float, np.ndarray]:
    """Sample an index from softmax(logits); returns (index, log p, probs)."""
    p = softmax(logits)
    u = rng.random()
    index = int(np.searchsorted(np.cumsum(p), u, side="right"))
    index = min(index, len(p) - 1)
    return index, float(np.log(p[index])), p


def bce_loss(y: int, y_hat: float) -> float:
    """Binary cross-entropy with the estimate clamped away from {0, 1}."""
    p = min(max(y_hat, BCE_EPS), 1.0 - BCE_EPS)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def prediction_loss(logits: np.ndarray, y: int) -> tuple[float, np.ndarray, float]:
    """BCE through a two-way softmax head (class 1 = "yes").

    Returns (loss, dloss/dlogits, y_hat).  The fused gradient is the
    usual softmax cross-entropy form p - onehot(y).
    """
    p = softmax(logits)
    y_hat = float(p[1])
    dlogits = p.copy()
    dlogits[y] -= 1.0
    return float(bce_loss(y, y_hat)), dlogits, y_hat


def reinforce_loss(log_probs, returns, baselines) -> float:
    """Policy-gradient surrogate L_a = -sum_t log pi(a_t) (R_t - b_t).

    Baselines are treated as constants here; the gradient routing (action
    head only) is the caller's responsibility.
    """
    if not (len(log_probs) == len(returns) == len(baselines)):
        raise ValueError("trajectory field lengths differ")
    total = 0.0
    for lp, ret, base in zip(log_probs, returns, baselines):
        total -= lp * (ret - base)
    return total


def reinforce_dlogits(probs: np.ndarray, action: int, advantage: float) -> np.ndarray:
    """d/dlogits of -log pi(action) * advantage for one step."""
    d = probs * advantage
    d[action] -= advantage
    return d


def baseline_loss(returns, baselines) -> tuple[float, np.ndarray]:
    """Mean squared error over the episode; returns (L_b, dL_b/db)."""
    r = np.asarray(returns, dtype=np.float64)
    b = np.asarray(baselines, dtype=np.float64)
    if r.shape != b.shape:
        raise ValueError("trajectory field lengths differ")
    diff = r - b
    n = len(r)
    return float(diff @ diff / n), -2.0 * diff / n


# ---------------------------------------------------------------------------
# Finite differences

def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float((np.abs(a - b) / denom).max())


# ---------------------------------------------------------------------------
# Checkpoint container

def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f8", copy=False).tobytes())


def save_tensors(path, tensors: "OrderedDict[str, np.ndarray]") -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            _write_tensor(fh, name, arr)


def load_tensors(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic: {magic!r}")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version: {version}")
        count = struct.unpack("<I", fh.read(4))[0]
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(count):
            name_len = struct.unpack("<H", fh.read(2))[0]
            name = fh.read(name_len).decode("utf-8")
            rank = struct.unpack("<B", fh.read(1))[0]
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            out[name] = data.reshape(shape)
        return out


def save_checkpoint(params: Parameters, path) -> None:
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name in params.names():
        tensors[name] = params.value(name)
    for name in params.names():
        tensors[name + ".m"] = params.moment_m(name)
        tensors[name + ".v"] = params.moment_v(name)
    tensors["adam.t"] = np.array([float(params.adam_t)])
    save_tensors(path, tensors)


def load_checkpoint(params: Parameters, path) -> None:
    tensors = load_tensors(path)
    for name in params.names():
        params.value(name)[...] = tensors[name]
        if name + ".m" in tensors:
            params.moment_m(name)[...] = tensors[name + ".m"]
        if name + ".v" in tensors:
            params.moment_v(name)[...] = tensors[name + ".v"]
    params.adam_t = int(tensors.get("adam.t", np.zeros(1))[0])
    params.zero_grads()
