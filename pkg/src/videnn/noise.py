"""Synthetic degradations: additive white Gaussian noise and a signal-dependent
sensor model (photon shot noise plus gain-dependent read noise).

All frames live in normalized ``[0, 1]`` float space. AWGN ``sigma`` is given in
8-bit units and divided by 255 when applied.

The sensor model gives the per-pixel noise standard deviation as::

    M(s) = sqrt( ag*dg / (nsat*s) + dg**2 * (ag*ct1n + ct2n)**2 )

and the noisy observation is ``s + N(0, 1) * M(s)``, clipped to ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

#: Floor applied to the signal inside ``M(s)``; the shot-noise term diverges at 0.
S_MIN = 1.0 / 255.0

CT1N = 1.25e-4
CT2N = 1.11e-4
NSAT = 7489.0

AG_RANGE = (0.0, 64.0)
DG_RANGE = (0.0, 32.0)
SIGMA_RANGE = (0.0, 55.0)

Seed = Union[int, Sequence[int]]


@dataclass(frozen=True)
class SensorNoiseParams:
    ag: float
    dg: float
    ct1n: float = CT1N
    ct2n: float = CT2N
    nsat: float = NSAT

    def __post_init__(self):
        vals = (self.ag, self.dg, self.ct1n, self.ct2n, self.nsat)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite sensor parameter in {self}")
        if not AG_RANGE[0] <= self.ag <= AG_RANGE[1]:
            raise ValueError(f"analog gain {self.ag} outside {AG_RANGE}")
        if not DG_RANGE[0] <= self.dg <= DG_RANGE[1]:
            raise ValueError(f"digital gain {self.dg} outside {DG_RANGE}")
        if self.ct1n <= 0 or self.ct2n <= 0 or self.nsat <= 0:
            raise ValueError("ct1n, ct2n and nsat must be positive")


@dataclass(frozen=True)
class AwgnParams:
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class NoiseSpec:
    """One degradation: exactly one of AWGN or sensor noise, plus an RNG seed."""

    params: Union[AwgnParams, SensorNoiseParams]
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.params, (AwgnParams, SensorNoiseParams)):
            raise TypeError(f"unsupported noise parameters: {type(self.params)!r}")

    @property
    def kind(self) -> str:
        return "awgn" if isinstance(self.params, AwgnParams) else "sensor"

    def encode(self) -> str:
        """Compact text form used in dataset manifests, e.g. ``awgn:sigma=25.0``."""
        p = self.params
        if isinstance(p, AwgnParams):
            return f"awgn:sigma={p.sigma!r}"
        return (f"sensor:ag={p.ag!r},dg={p.dg!r},ct1n={p.ct1n!r},"
                f"ct2n={p.ct2n!r},nsat={p.nsat!r}")

    @classmethod
    def decode(cls, text: str, seed: int = 0) -> "NoiseSpec":
        kind, _, body = text.partition(":")
        try:
            kv = {k: float(v) for k, v in (item.split("=") for item in body.split(","))}
        except ValueError as exc:
            raise ValueError(f"malformed noise spec {text!r}") from exc
        if kind == "awgn":
            return cls(AwgnParams(**kv), seed)
        if kind == "sensor":
            return cls(SensorNoiseParams(**kv), seed)
        raise ValueError(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class NoiseMix:
    """Blind-training mixture: AWGN with probability ``p_awgn``, sensor noise otherwise."""

    p_awgn: float = 0.5
    sigma_range: tuple = SIGMA_RANGE
    ag_range: tuple = AG_RANGE
    dg_range: tuple = DG_RANGE
    sensor_defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_awgn <= 1.0:
            raise ValueError("p_awgn must lie in [0, 1]")
        for name in ("sigma_range", "ag_range", "dg_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"empty range for {name}: {(lo, hi)}")


def noise_rng(seed: Seed) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` (an int or a tuple of ints)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def noise_scale(s, params: SensorNoiseParams):
    """Noise standard deviation of the sensor model at signal level ``s``.

    Accepts scalars or arrays; raises if any ``s`` is below `S_MIN` or non-finite.
    """
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("signal contains non-finite values")
    if np.any(s < S_MIN):
        raise ValueError(f"signal below s_min={S_MIN:.6g}; clamp before evaluating")
    p = params
    shot = (p.ag * p.dg) / (p.nsat * s)
    read = p.dg ** 2 * (p.ag * p.ct1n + p.ct2n) ** 2
    m = np.sqrt(shot + read)
    return float(m) if m.ndim == 0 else m


def _check_frame(frame) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0 or frame.ndim < 2:
        raise ValueError(f"empty or malformed frame with shape {frame.shape}")
    if not np.all(np.isfinite(frame)):
        raise ValueError("frame contains non-finite values")
    return frame


def sensor_noise_field(frame, params: SensorNoiseParams, seed: Seed) -> np.ndarray:
    """Pre-clip additive noise ``N(0,1) * M(max(s, S_MIN))`` for ``frame``."""
    frame = _check_frame(frame)
    n = noise_rng(seed).standard_normal(frame.shape)
    return n * noise_scale(np.maximum(frame, S_MIN), params)


def awgn_field(frame, params: AwgnParams, seed: Seed) -> np.ndarray:
    frame = _check_frame(frame)
    return noise_rng(seed).standard_normal(frame.shape) * (params.sigma / 255.0)


def apply_sensor_noise(frame, params: SensorNoiseParams, seed: Seed) -> np.ndarray:
    frame = _check_frame(frame)
    return np.clip(frame + sensor_noise_field(frame, params, seed), 0.0, 1.0)


def apply_awgn(frame, params: AwgnParams, seed: Seed) -> np.ndarray:
    frame = _check_frame(frame)
    return np.clip(frame + awgn_field(frame, params, seed), 0.0, 1.0)


def apply_noise(frame, spec: NoiseSpec, seed: Seed | None = None) -> np.ndarray:
    """Degrade ``frame`` according to ``spec``; ``seed`` overrides ``spec.seed``."""
    seed = spec.seed if seed is None else seed
    if isinstance(spec.params, AwgnParams):
        return apply_awgn(frame, spec.params, seed)
    return apply_sensor_noise(frame, spec.params, seed)


def sample_noise_spec(rng: np.random.Generator, mix: NoiseMix = NoiseMix()) -> NoiseSpec:
    """Draw one blind-training degradation from ``mix``.

    The variant is chosen with probability ``mix.p_awgn``; its parameters are
    drawn uniformly from the configured ranges. A fresh noise seed is drawn from
    ``rng`` too, so the returned spec fully determines the realization.
    """
    if rng.random() < mix.p_awgn:
        params = AwgnParams(float(rng.uniform(*mix.sigma_range)))
    else:
        ag = float(rng.uniform(*mix.ag_range))
        dg = float(rng.uniform(*mix.dg_range))
        params = SensorNoiseParams(ag, dg, **mix.sensor_defaults)
    seed = int(rng.integers(0, 2 ** 63 - 1))
    return NoiseSpec(params, seed)
