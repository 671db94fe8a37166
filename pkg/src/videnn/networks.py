"""Residual denoising CNNs: the spatial net, the 3/5-frame temporal nets, the
two-stage video pipeline, a temporal-average baseline and weight files.

A network is a plain stack of 3x3 same-padded convolutions::

    conv(in -> first_width) + act
    [conv(mid_width) + BN? + act] * (depth - 2)
    conv(-> 3)

and predicts the noise residual; denoising subtracts it from the input (the
center frame, for temporal nets) and clips to ``[0, 1]``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import core
from .core import BatchNormParams, ConvParams

ACTIVATIONS = ("relu", "leaky_relu")


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int
    depth: int = 20
    first_width: int = 128
    mid_width: int = 64
    use_bn: bool = True
    activation: str = "relu"
    alpha: float = core.LEAKY_ALPHA
    out_channels: int = 3
    kernel_size: int = 3

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be at least 2")
        if min(self.in_channels, self.first_width, self.mid_width) < 1:
            raise ValueError("channel counts must be positive")
        if self.out_channels != 3:
            raise ValueError("denoisers output 3 channels")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")

    @property
    def window(self) -> int:
        """Number of stacked frames the net consumes (1 for the spatial net)."""
        return self.in_channels // 3

    def layer_channels(self):
        """``(c_in, c_out, has_bn)`` per convolution, in order."""
        out = [(self.in_channels, self.first_width, False)]
        prev = self.first_width
        for _ in range(self.depth - 2):
            out.append((prev, self.mid_width, self.use_bn))
            prev = self.mid_width
        out.append((prev, self.out_channels, False))
        return out


def spatial_spec(**overrides) -> NetworkSpec:
    """Single-frame denoiser: BN + ReLU, first layer 128 wide, depth 20."""
    return NetworkSpec(**{"in_channels": 3, **overrides})


def temporal_spec(window: int = 3, **overrides) -> NetworkSpec:
    """Multi-frame denoiser: no BN, LeakyReLU, ``3 * window`` input channels."""
    if window < 1 or window % 2 == 0:
        raise ValueError("temporal window must be a positive odd number")
    base = {"in_channels": 3 * window, "use_bn": False, "activation": "leaky_relu"}
    return NetworkSpec(**{**base, **overrides})


@dataclass
class Layer:
    conv: ConvParams
    bn: Optional[BatchNormParams] = None


@dataclass
class NetworkWeights:
    spec: NetworkSpec
    layers: List[Layer] = field(default_factory=list)

    def params(self) -> List[np.ndarray]:
        """Trainable arrays in a fixed order: kernel, bias[, gamma, beta] per layer."""
        out = []
        for layer in self.layers:
            out += [layer.conv.kernel, layer.conv.bias]
            if layer.bn is not None:
                out += [layer.bn.gamma, layer.bn.beta]
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "NetworkWeights":
        it = iter(params)
        layers = []
        for layer in self.layers:
            conv = ConvParams(next(it), next(it))
            bn = None
            if layer.bn is not None:
                bn = replace(layer.bn, gamma=next(it), beta=next(it))
            layers.append(Layer(conv, bn))
        return NetworkWeights(self.spec, layers)

    def astype(self, dtype) -> "NetworkWeights":
        def cast(a):
            return np.asarray(a, dtype=dtype)
        layers = []
        for layer in self.layers:
            bn = None
            if layer.bn is not None:
                b = layer.bn
                bn = replace(b, gamma=cast(b.gamma), beta=cast(b.beta),
                             running_mean=cast(b.running_mean), running_var=cast(b.running_var))
            layers.append(Layer(ConvParams(cast(layer.conv.kernel), cast(layer.conv.bias)), bn))
        return NetworkWeights(self.spec, layers)

    def arrays(self) -> List[np.ndarray]:
        """Every stored array (trainable and running statistics), in file order."""
        out = []
        for layer in self.layers:
            out += [layer.conv.kernel, layer.conv.bias]
            if layer.bn is not None:
                b = layer.bn
                out += [b.gamma, b.beta, b.running_mean, b.running_var]
        return out

    def equals(self, other: "NetworkWeights") -> bool:
        """Bit-exact comparison, spec included."""
        if self.spec != other.spec or len(self.layers) != len(other.layers):
            return False
        return all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.arrays(), other.arrays()))

    def zero_last_layer(self) -> "NetworkWeights":
        """Copy whose final convolution is all zeros (residual identically 0)."""
        last = self.layers[-1].conv
        layers = list(self.layers[:-1]) + [
            Layer(ConvParams(np.zeros_like(last.kernel), np.zeros_like(last.bias)))]
        return NetworkWeights(self.spec, layers)


def build_network(spec: NetworkSpec, init_seed: int = 0, dtype=np.float32) -> NetworkWeights:
    """Freshly initialized weights: zero-mean normal kernels with variance 2/fan_in, zero biases."""
    rng = np.random.default_rng(init_seed)
    k = spec.kernel_size
    layers = []
    for c_in, c_out, has_bn in spec.layer_channels():
        std = np.sqrt(2.0 / (k * k * c_in))
        kernel = (rng.standard_normal((k, k, c_in, c_out)) * std).astype(dtype)
        conv = ConvParams(kernel, np.zeros(c_out, dtype))
        layers.append(Layer(conv, BatchNormParams.fresh(c_out, dtype) if has_bn else None))
    return NetworkWeights(spec, layers)


# -- forward / backward --------------------------------------------------------------

def _act(spec: NetworkSpec, z):
    if spec.activation == "relu":
        return core.relu_forward(z)
    return core.leaky_relu_forward(z, spec.alpha)


def _act_backward(spec: NetworkSpec, z, g):
    if spec.activation == "relu":
        return core.relu_backward(z, g)
    return core.leaky_relu_backward(z, g, spec.alpha)


def _check_input(weights: NetworkWeights, x: np.ndarray):
    if x.ndim not in (3, 4) or x.shape[-1] != weights.spec.in_channels:
        raise ValueError(f"input shape {x.shape} incompatible with a "
                         f"{weights.spec.in_channels}-channel network")


def forward_train(weights: NetworkWeights, x: np.ndarray, train: bool = True):
    """Forward pass that keeps what `backward` needs.

    Returns ``(residual, caches, updated_weights)``; in training mode the
    returned weights carry BN running statistics updated with this batch.
    """
    _check_input(weights, x)
    spec = weights.spec
    caches = []
    new_layers = []
    h = x
    last = len(weights.layers) - 1
    for i, layer in enumerate(weights.layers):
        inp = h
        z = core.conv2d_forward(h, layer.conv)
        bn_cache = None
        bn = layer.bn
        if bn is not None:
            z, bn_cache = core.batch_norm_forward(z, bn, train)
            if train:
                bn = core.bn_update_running(bn, bn_cache)
        h = z if i == last else _act(spec, z)
        caches.append((inp, z, bn_cache))
        new_layers.append(Layer(layer.conv, bn))
    return h, caches, NetworkWeights(spec, new_layers)


def backward(weights: NetworkWeights, caches, grad_out: np.ndarray) -> List[np.ndarray]:
    """Parameter gradients in `NetworkWeights.params` order."""
    spec = weights.spec
    grads: List[List[np.ndarray]] = []
    g = grad_out
    last = len(weights.layers) - 1
    for i in range(last, -1, -1):
        layer = weights.layers[i]
        inp, z, bn_cache = caches[i]
        if i != last:
            g = _act_backward(spec, z, g)
        layer_grads = []
        if layer.bn is not None:
            g, dgamma, dbeta = core.batch_norm_backward(g, layer.bn, bn_cache)
            layer_grads = [dgamma, dbeta]
        g_in, gconv = core.conv2d_backward(inp, layer.conv, g, need_input_grad=i > 0)
        grads.append([gconv.kernel, gconv.bias] + layer_grads)
        g = g_in
    return [a for layer_grads in reversed(grads) for a in layer_grads]


def forward_residual(weights: NetworkWeights, x: np.ndarray) -> np.ndarray:
    """Predicted noise residual (inference mode, BN uses running statistics)."""
    out, _, _ = forward_train(weights, x, train=False)
    return out


# -- denoising -----------------------------------------------------------------------

def denoise_frame(spatial: NetworkWeights, frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    return np.clip(frame - forward_residual(spatial, frame), 0.0, 1.0)


def stack_window(frames: Sequence[np.ndarray]) -> np.ndarray:
    shape = frames[0].shape
    for f in frames:
        if f.shape != shape:
            raise ValueError(f"frame dimensions differ within window: {f.shape} vs {shape}")
    return np.concatenate(frames, axis=-1)


def denoise_window(temporal: NetworkWeights, frames: Sequence[np.ndarray]) -> np.ndarray:
    """Denoised center frame of ``window`` consecutive frames (temporal order)."""
    window = temporal.spec.window
    if len(frames) != window:
        raise ValueError(f"expected {window} frames, got {len(frames)}")
    stacked = stack_window([np.asarray(f) for f in frames])
    center = np.asarray(frames[window // 2])
    return np.clip(center - forward_residual(temporal, stacked), 0.0, 1.0)


def window_indices(n: int, i: int, window: int) -> List[int]:
    """Frame indices of the window centered at ``i``, edge frames replicated."""
    r = window // 2
    return [min(max(i + o, 0), n - 1) for o in range(-r, r + 1)]


def _check_video(frames):
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    shape = np.shape(frames[0])
    for f in frames:
        if np.shape(f) != shape:
            raise ValueError(f"mixed frame dimensions: {np.shape(f)} vs {shape}")


def temporal_denoise_video(temporal: NetworkWeights, frames) -> List[np.ndarray]:
    _check_video(frames)
    window = temporal.spec.window
    n = len(frames)
    return [denoise_window(temporal, [frames[j] for j in window_indices(n, i, window)])
            for i in range(n)]


@dataclass
class VidennPipeline:
    spatial: NetworkWeights
    temporal: NetworkWeights

    def __post_init__(self):
        if self.spatial.spec.in_channels != 3:
            raise ValueError("spatial stage must take 3 channels")
        if self.temporal.spec.in_channels % 3 or self.temporal.spec.window % 2 == 0:
            raise ValueError("temporal stage must take 3*window channels with odd window")

    @property
    def window(self) -> int:
        return self.temporal.spec.window


def videnn_denoise_video(pipeline: VidennPipeline, frames) -> List[np.ndarray]:
    """Spatially denoise every frame, then temporally denoise each center frame."""
    _check_video(frames)
    spatial = [denoise_frame(pipeline.spatial, f) for f in frames]
    return temporal_denoise_video(pipeline.temporal, spatial)


def temporal_average_baseline(frames, window: int = 3) -> List[np.ndarray]:
    """Centered moving average over ``window`` frames with edge replication."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number")
    _check_video(frames)
    n = len(frames)
    stack = np.asarray(frames, dtype=np.float64)
    return [stack[window_indices(n, i, window)].mean(axis=0) for i in range(n)]


DENOISE_MODES = ("spatial", "temporal", "full", "temporal-spatial", "average")


def denoise_video(frames, mode: str, spatial: NetworkWeights | None = None,
                  temporal: NetworkWeights | None = None, window: int = 3):
    """Run one arm of the architecture comparison.

    ``spatial``: spatial net per frame. ``temporal``: temporal net on the noisy
    frames. ``full``: spatial then temporal. ``temporal-spatial``: reversed
    order. ``average``: moving-average baseline over ``window`` frames.
    """
    needs = {"spatial": (True, False), "temporal": (False, True), "full": (True, True),
             "temporal-spatial": (True, True), "average": (False, False)}
    if mode not in needs:
        raise ValueError(f"unknown mode {mode!r}; choose from {DENOISE_MODES}")
    need_s, need_t = needs[mode]
    if need_s and spatial is None:
        raise ValueError(f"mode {mode!r} needs spatial weights")
    if need_t and temporal is None:
        raise ValueError(f"mode {mode!r} needs temporal weights")
    _check_video(frames)
    if mode == "spatial":
        return [denoise_frame(spatial, f) for f in frames]
    if mode == "temporal":
        return temporal_denoise_video(temporal, frames)
    if mode == "full":
        return videnn_denoise_video(VidennPipeline(spatial, temporal), frames)
    if mode == "temporal-spatial":
        return [denoise_frame(spatial, f) for f in temporal_denoise_video(temporal, frames)]
    return temporal_average_baseline(frames, window)


def dump_first_layer_activations(weights: NetworkWeights, x: np.ndarray) -> List[np.ndarray]:
    """Post-activation output of each first-layer filter, min-max scaled to [0, 1].

    Constant maps come back as all zeros.
    """
    _check_input(weights, x)
    if x.ndim != 3:
        raise ValueError("expected a single HWC input")
    a = _act(weights.spec, core.conv2d_forward(x, weights.layers[0].conv))
    maps = []
    for c in range(a.shape[-1]):
        m = a[..., c].astype(np.float64)
        lo, hi = m.min(), m.max()
        maps.append((m - lo) / (hi - lo) if hi > lo else np.zeros_like(m))
    return maps


# -- weight files --------------------------------------------------------------------

MAGIC = b"VDNN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH")
_SPEC = struct.Struct("<HHHHHBBBddd")


class WeightFileError(Exception):
    """Base class for unreadable weight or checkpoint files."""


class CorruptHeaderError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class SpecMismatchError(WeightFileError):
    pass


def _bn_consts(weights: NetworkWeights):
    for layer in weights.layers:
        if layer.bn is not None:
            return layer.bn.eps, layer.bn.momentum
    return core.BN_EPS, core.BN_MOMENTUM


def weights_to_bytes(weights: NetworkWeights) -> bytes:
    s = weights.spec
    eps, mom = _bn_consts(weights)
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION),
             _SPEC.pack(s.in_channels, s.depth, s.first_width, s.mid_width, s.out_channels,
                        s.kernel_size, int(s.use_bn), ACTIVATIONS.index(s.activation),
                        s.alpha, eps, mom)]
    for a in weights.arrays():
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def weights_from_bytes(blob: bytes, expected_spec: NetworkSpec | None = None) -> NetworkWeights:
    head = _HEADER.size + _SPEC.size
    if len(blob) < _HEADER.size:
        raise TruncatedFileError("file shorter than header")
    magic, version = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptHeaderError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptHeaderError(f"unsupported format version {version}")
    if len(blob) < head:
        raise TruncatedFileError("file shorter than spec block")
    (c_in, depth, first, mid, c_out, ks, use_bn, act, alpha, eps, mom) = _SPEC.unpack_from(
        blob, _HEADER.size)
    try:
        spec = NetworkSpec(c_in, depth, first, mid, bool(use_bn), ACTIVATIONS[act], alpha,
                           c_out, ks)
    except (ValueError, IndexError) as exc:
        raise CorruptHeaderError(f"invalid spec block: {exc}") from exc
    if expected_spec is not None and spec != expected_spec:
        raise SpecMismatchError(f"file holds {spec}, expected {expected_spec}")

    shapes = []
    for ci, co, has_bn in spec.layer_channels():
        shapes += [(ks, ks, ci, co), (co,)]
        if has_bn:
            shapes += [(co,)] * 4
    n_floats = sum(int(np.prod(sh)) for sh in shapes)
    expected_len = head + 4 * n_floats + 4
    if len(blob) < expected_len:
        raise TruncatedFileError(f"expected {expected_len} bytes, found {len(blob)}")
    if len(blob) > expected_len:
        raise SpecMismatchError(f"payload larger than the embedded spec allows "
                                f"({len(blob)} > {expected_len} bytes)")
    (crc,) = struct.unpack_from("<I", blob, expected_len - 4)
    if zlib.crc32(blob[:expected_len - 4]) != crc:
        raise ChecksumError("CRC32 mismatch")

    offset = head
    arrays = []
    for sh in shapes:
        n = int(np.prod(sh))
        arrays.append(np.frombuffer(blob, "<f4", n, offset).reshape(sh).astype(np.float32))
        offset += 4 * n
    it = iter(arrays)
    layers = []
    for _, _, has_bn in spec.layer_channels():
        conv = ConvParams(next(it), next(it))
        bn = None
        if has_bn:
            bn = BatchNormParams(next(it), next(it), next(it), next(it), eps, mom)
        layers.append(Layer(conv, bn))
    return NetworkWeights(spec, layers)


def save_weights(weights: NetworkWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(weights))


def load_weights(path, expected_spec: NetworkSpec | None = None) -> NetworkWeights:
    return weights_from_bytes(Path(path).read_bytes(), expected_spec)
