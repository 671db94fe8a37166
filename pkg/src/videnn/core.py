"""Dense NHWC tensor kernels with hand-written backward passes.

Everything here is plain numpy. Tensors are ``(batch, height, width, channels)``;
3-D ``(height, width, channels)`` inputs are accepted by the convolution and
returned in the same rank. Computation follows the dtype of the inputs, so the
same code runs in float64 for gradient checks and float32 for training.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LEAKY_ALPHA = 0.2


@dataclass
class ConvParams:
    kernel: np.ndarray  # (k, k, c_in, c_out)
    bias: np.ndarray    # (c_out,)

    def __post_init__(self):
        k = self.kernel
        if k.ndim != 4 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be (k, k, c_in, c_out) with odd k, got {k.shape}")
        if self.bias.shape != (k.shape[3],):
            raise ValueError(f"bias shape {self.bias.shape} does not match c_out={k.shape[3]}")

    @property
    def c_in(self) -> int:
        return self.kernel.shape[2]

    @property
    def c_out(self) -> int:
        return self.kernel.shape[3]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "BatchNormParams":
        return cls(np.ones(channels, dtype), np.zeros(channels, dtype),
                   np.zeros(channels, dtype), np.ones(channels, dtype))


# -- convolution ---------------------------------------------------------------

def _batched(x: np.ndarray):
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected HWC or NHWC tensor, got shape {x.shape}")
    return x, False


def conv2d_forward(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Same-padded (zero) stride-1 cross-correlation plus bias."""
    x4, squeeze = _batched(np.asarray(x))
    n, h, w, c = x4.shape
    if c != params.c_in:
        raise ValueError(f"input has {c} channels, kernel expects {params.c_in}")
    k = params.kernel
    ks = k.shape[0]
    p = ks // 2
    dtype = np.result_type(x4.dtype, k.dtype)
    xp = np.pad(x4, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.empty((n * h * w, params.c_out), dtype=dtype)
    out[...] = params.bias
    for dy in range(ks):
        for dx in range(ks):
            tap = xp[:, dy:dy + h, dx:dx + w, :].reshape(-1, c)
            out += tap @ k[dy, dx]
    out = out.reshape(n, h, w, params.c_out)
    return out[0] if squeeze else out


def conv2d_backward(x: np.ndarray, params: ConvParams, grad_out: np.ndarray,
                    need_input_grad: bool = True):
    """Gradients of ``sum(grad_out * conv2d_forward(x, params))``.

    Returns ``(grad_input, ConvParams(grad_kernel, grad_bias))``; ``grad_input``
    is None when ``need_input_grad`` is false.
    """
    x4, squeeze = _batched(np.asarray(x))
    g4, _ = _batched(np.asarray(grad_out))
    n, h, w, c = x4.shape
    if g4.shape != (n, h, w, params.c_out):
        raise ValueError(f"grad_out shape {g4.shape} inconsistent with forward output "
                         f"{(n, h, w, params.c_out)}")
    k = params.kernel
    ks = k.shape[0]
    p = ks // 2
    xp = np.pad(x4, ((0, 0), (p, p), (p, p), (0, 0)))
    g2 = g4.reshape(-1, params.c_out)
    grad_k = np.empty(k.shape, dtype=np.result_type(x4.dtype, g4.dtype))
    grad_xp = np.zeros(xp.shape, dtype=np.result_type(k.dtype, g4.dtype)) if need_input_grad else None
    for dy in range(ks):
        for dx in range(ks):
            tap = xp[:, dy:dy + h, dx:dx + w, :].reshape(-1, c)
            grad_k[dy, dx] = tap.T @ g2
            if need_input_grad:
                grad_xp[:, dy:dy + h, dx:dx + w, :] += (g2 @ k[dy, dx].T).reshape(n, h, w, c)
    grad_b = g2.sum(axis=0)
    grad_x = None
    if need_input_grad:
        grad_x = grad_xp[:, p:p + h, p:p + w, :]
        if squeeze:
            grad_x = grad_x[0]
    return grad_x, ConvParams(grad_k, grad_b)


# -- activations ---------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0)


def leaky_relu_forward(x, alpha: float = LEAKY_ALPHA):
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return np.where(x > 0, x, x * alpha)


def leaky_relu_backward(x, grad_out, alpha: float = LEAKY_ALPHA):
    return np.where(x > 0, grad_out, grad_out * alpha)


# -- batch normalization ---------------------------------------------------------

def batch_norm_forward(x: np.ndarray, params: BatchNormParams, train: bool):
    """Per-channel normalization over (batch, height, width).

    Returns ``(y, cache)``. In training mode batch statistics are used and the
    cache carries them as ``cache["mean"]`` / ``cache["var"]``; feed it to
    `bn_update_running` to obtain the updated running statistics.
    """
    if train:
        if x.ndim != 4 or x.shape[0] < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = 1.0 / np.sqrt(var + params.eps)
    xhat = (x - mean) * inv_std
    y = xhat * params.gamma + params.beta
    cache = {"xhat": xhat, "inv_std": inv_std, "mean": mean, "var": var, "train": train}
    return y, cache


def batch_norm_backward(grad_out: np.ndarray, params: BatchNormParams, cache):
    """Returns ``(grad_input, grad_gamma, grad_beta)``."""
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    axes = tuple(range(grad_out.ndim - 1))
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    dxhat = grad_out * params.gamma
    if not cache["train"]:
        return dxhat * inv_std, grad_gamma, grad_beta
    m = int(np.prod([grad_out.shape[a] for a in axes]))
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, grad_gamma, grad_beta


def bn_update_running(params: BatchNormParams, cache) -> BatchNormParams:
    mom = params.momentum
    dtype = params.running_mean.dtype
    rm = (mom * params.running_mean + (1 - mom) * cache["mean"]).astype(dtype)
    rv = (mom * params.running_var + (1 - mom) * cache["var"]).astype(dtype)
    return replace(params, running_mean=rm, running_var=rv)


# -- loss ----------------------------------------------------------------------

def l2_loss(pred: np.ndarray, target: np.ndarray, mean: bool = False) -> float:
    """Sum of squared differences; divided by the batch size when ``mean``."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred.astype(np.float64) - target
    loss = float(np.sum(d * d))
    if mean:
        loss /= pred.shape[0]
    return loss


def l2_loss_backward(pred: np.ndarray, target: np.ndarray, mean: bool = False) -> np.ndarray:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    g = 2 * (pred - target)
    if mean:
        g = g / pred.shape[0]
    return g


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float | None = None):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state have different lengths")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    lr = state.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        step = (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        new_p.append((p - step).astype(p.dtype, copy=False))
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
    return new_p, replace(state, m=new_m, v=new_v, t=t, lr=lr)


# -- finite differences ------------------------------------------------------------

def finite_diff_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                         h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(max|a|, max|n|)``; 0 when both are identically zero."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)
