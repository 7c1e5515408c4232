"""Fully connected regression network with hand-written backpropagation and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of
shape ``(B, fan_in)`` maps to ``X @ W + b``. Computation runs in the dtype of
the parameters (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import DataError

_GELU_C = np.sqrt(2.0 / np.pi)


class Activation(str, enum.Enum):
    RELU = "relu"
    GELU = "gelu"


@dataclass(frozen=True)
class MlpArch:
    input_dim: int
    hidden: tuple[int, ...] = (512, 512, 256, 128)
    activation: Activation = Activation.RELU
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise DataError("input_dim must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise DataError("hidden must be a nonempty list of positive widths")
        if self.output_dim != 1:
            raise DataError("only scalar-output networks are supported")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def param_count(self) -> int:
        s = self.sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def arrays(self) -> list[np.ndarray]:
        """Weight then bias of each layer, in layer order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.arrays)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> MlpParams:
        return MlpParams([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def from_flat(cls, arch: MlpArch, flat, dtype=np.float32) -> MlpParams:
        flat = np.asarray(flat)
        if flat.size != arch.param_count:
            raise DataError(f"expected {arch.param_count} parameters, got {flat.size}")
        ws, bs, k = [], [], 0
        for a, b in zip(arch.sizes[:-1], arch.sizes[1:]):
            ws.append(flat[k:k + a * b].reshape(a, b).astype(dtype))
            k += a * b
            bs.append(flat[k:k + b].astype(dtype))
            k += b
        return cls(ws, bs)

    def matches(self, arch: MlpArch) -> bool:
        s = arch.sizes
        return len(self.weights) == len(s) - 1 and all(
            w.shape == (a, b) and bb.shape == (b,)
            for w, bb, a, b in zip(self.weights, self.biases, s[:-1], s[1:])
        )


def init_params(arch: MlpArch, seed: int = 0, dtype=np.float32) -> MlpParams:
    """Kaiming-uniform weights (fan-in), zero biases."""
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    ws, bs = [], []
    s = arch.sizes
    for layer, (a, b) in enumerate(zip(s[:-1], s[1:])):
        gain = 1.0 if layer == len(s) - 2 else np.sqrt(2.0)
        bound = gain * np.sqrt(3.0 / a)
        ws.append(rng.uniform(-bound, bound, size=(a, b)).astype(dtype))
        bs.append(np.zeros(b, dtype=dtype))
    return MlpParams(ws, bs)


def _act(z, kind):
    if kind is Activation.RELU:
        return np.maximum(z, 0)
    inner = _GELU_C * (z + 0.044715 * z**3)
    return 0.5 * z * (1.0 + np.tanh(inner))


def _act_grad(z, kind):
    if kind is Activation.RELU:
        return (z > 0).astype(z.dtype)
    inner = _GELU_C * (z + 0.044715 * z**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)


def _check_input(params: MlpParams, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise DataError(
            f"feature dimension {x.shape[-1]} does not match network input {params.weights[0].shape[0]}"
        )


def forward_batch(params: MlpParams, x, activation=Activation.RELU) -> np.ndarray:
    """Network outputs for a batch ``x`` of shape ``(B, input_dim)``."""
    kind = Activation(activation)
    h = np.asarray(x, dtype=params.dtype)
    _check_input(params, h)
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = _act(h, kind)
    return h[:, 0]


def mlp_forward(params: MlpParams, p, activation=Activation.RELU) -> float:
    """Scalar output for a single feature vector."""
    p = np.asarray(p)
    if p.ndim != 1:
        raise DataError("mlp_forward takes a single feature vector")
    return float(forward_batch(params, p[None, :], activation)[0])


def mlp_backward(params: MlpParams, batch, targets, activation=Activation.RELU):
    """Mean squared error over the batch and its exact gradient for every parameter."""
    kind = Activation(activation)
    x = np.asarray(batch, dtype=params.dtype)
    if x.ndim == 1:
        x = x[None, :]
    y = np.asarray(targets, dtype=params.dtype).ravel()
    if x.shape[0] == 0:
        raise DataError("empty batch")
    if y.shape[0] != x.shape[0]:
        raise DataError(f"{x.shape[0]} samples but {y.shape[0]} targets")
    _check_input(params, x)
    last = len(params.weights) - 1
    inputs, pre = [], []
    h = x
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = _act(z, kind) if k < last else z
    resid = h[:, 0] - y
    n = x.shape[0]
    loss = float(np.mean(resid.astype(np.float64) ** 2))
    grad = (2.0 / n) * resid[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(last, -1, -1):
        if k < last:
            grad = grad * _act_grad(pre[k], kind)
        gw[k] = inputs[k].T @ grad
        gb[k] = grad.sum(axis=0)
        if k > 0:
            grad = grad @ params.weights[k].T
    return loss, MlpParams(gw, gb)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: MlpParams, **kw) -> AdamState:
        return cls([np.zeros_like(a) for a in params.arrays], [np.zeros_like(a) for a in params.arrays], **kw)

    def copy(self) -> AdamState:
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step,
                         self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState, lr: float | None = None,
              inplace: bool = False):
    """One bias-corrected Adam update. Returns ``(params, state)``.

    With ``inplace=True`` the given objects are updated and returned; otherwise
    copies are made first.
    """
    if not inplace:
        params, state = params.copy(), state.copy()
    lr = state.lr if lr is None else lr
    p_arrays, g_arrays = params.arrays, grads.arrays
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise DataError("gradient shapes do not match parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        dt = p.dtype.type
        _kernels.adam_update(p, np.ascontiguousarray(g, dtype=p.dtype), m, v, dt(state.beta1),
                             dt(state.beta2), dt(lr), dt(c1), dt(c2), dt(state.eps))
    return params, state
