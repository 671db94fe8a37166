"""Mini-batch Adam training of residual denoisers, with checkpoints and loss traces.

Shuffling uses one RNG stream per epoch derived from ``(shuffle_seed, epoch)``,
so a run can be interrupted after any step and resumed bit-identically.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import math
import struct
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import core
from .core import AdamState
from .data import PatchPair, ResidualDataset, TripletPatchPair
from .metrics import psnr, ssim
from .networks import (NetworkWeights, WeightFileError, backward, forward_residual,
                       forward_train, weights_from_bytes, weights_to_bytes)

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    epochs: int
    batch_size: int = 128
    lr_segments: List[Tuple[int, float]] = field(default_factory=lambda: [(1, 1e-3)])
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0
    mean_loss: bool = False
    grad_clip: Optional[float] = None
    # not part of the schedule identity
    checkpoint_every: int = 0
    max_steps: Optional[int] = None

    def __post_init__(self):
        self.lr_segments = [(int(n), float(lr)) for n, lr in self.lr_segments]
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(n < 1 for n, _ in self.lr_segments):
            raise ValueError("every lr segment must span at least one epoch")
        if sum(n for n, _ in self.lr_segments) != self.epochs:
            raise ValueError(f"lr segments span {sum(n for n, _ in self.lr_segments)} epochs, "
                             f"schedule has {self.epochs}")

    def lr_at(self, epoch: int) -> float:
        end = 0
        for n, lr in self.lr_segments:
            end += n
            if epoch < end:
                return lr
        return self.lr_segments[-1][1]

    def digest(self) -> bytes:
        d = asdict(self)
        d.pop("checkpoint_every")
        d.pop("max_steps")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).digest()


def spatial_schedule(**kw) -> TrainSchedule:
    """100 epochs, batch 128: lr 1e-3 for 20 epochs then 1e-4 for 80."""
    return TrainSchedule(**{"epochs": 100, "batch_size": 128,
                            "lr_segments": [(20, 1e-3), (80, 1e-4)], **kw})


def temporal_schedule(**kw) -> TrainSchedule:
    """60 epochs, batch 128, lr 1e-4."""
    return TrainSchedule(**{"epochs": 60, "batch_size": 128, "lr_segments": [(60, 1e-4)], **kw})


@dataclass
class LossTrace:
    steps: List[int] = field(default_factory=list)
    epochs: List[int] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)

    def append(self, step, epoch, lr, loss):
        if self.steps and step <= self.steps[-1]:
            raise ValueError("loss trace steps must increase")
        self.steps.append(step)
        self.epochs.append(epoch)
        self.lrs.append(lr)
        self.losses.append(loss)

    def epoch_means(self) -> dict:
        out = {}
        for e, loss in zip(self.epochs, self.losses):
            out.setdefault(e, []).append(loss)
        return {e: float(np.mean(v)) for e, v in out.items()}

    def __eq__(self, other):
        return (isinstance(other, LossTrace) and self.steps == other.steps
                and self.epochs == other.epochs and self.lrs == other.lrs
                and self.losses == other.losses)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "epoch", "lr", "loss"])
            for row in zip(self.steps, self.epochs, self.lrs, self.losses):
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])


class TrainingDivergedError(FloatingPointError):
    """Non-finite loss; carries the step, learning rate and batch indices."""

    def __init__(self, step, lr, batch_indices, loss):
        self.step, self.lr, self.batch_indices, self.loss = step, lr, list(batch_indices), loss
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr}); "
                         f"batch dataset indices: {self.batch_indices}")


class CheckpointError(WeightFileError):
    pass


def epoch_batches(n: int, schedule: TrainSchedule, epoch: int) -> List[np.ndarray]:
    """Shuffled index batches for one epoch; a trailing singleton joins the previous batch."""
    perm = np.random.default_rng([schedule.shuffle_seed, epoch]).permutation(n)
    bs = schedule.batch_size
    batches = [perm[i:i + bs] for i in range(0, n, bs)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _total_steps(n: int, schedule: TrainSchedule) -> Tuple[int, int]:
    per_epoch = len(epoch_batches(n, schedule, 0))
    total = per_epoch * schedule.epochs
    return per_epoch, total


@contextlib.contextmanager
def _determinism(deterministic: bool):
    if deterministic:
        with threadpool_limits(limits=1):
            yield
    else:
        yield


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if norm <= max_norm or norm == 0:
        return grads
    scale = max_norm / norm
    return [g * np.asarray(scale, g.dtype) for g in grads]


def _run(weights: NetworkWeights, adam: AdamState, step: int, trace: LossTrace,
         dataset: ResidualDataset, schedule: TrainSchedule, checkpoint_path, deterministic,
         callback=None):
    if dataset.channels != weights.spec.in_channels:
        raise ValueError(f"dataset has {dataset.channels} input channels, network expects "
                         f"{weights.spec.in_channels}")
    n = len(dataset)
    per_epoch, total = _total_steps(n, schedule)
    if schedule.max_steps is not None:
        total = min(total, schedule.max_steps)
    with _determinism(deterministic):
        while step < total:
            epoch, b = divmod(step, per_epoch)
            idx = epoch_batches(n, schedule, epoch)[b]
            lr = schedule.lr_at(epoch)
            x, t = dataset.inputs[idx], dataset.targets[idx]
            # overflow surfaces as a non-finite loss, reported below with context
            with np.errstate(over="ignore", invalid="ignore"):
                out, caches, trained = forward_train(weights, x, train=True)
                loss = core.l2_loss(out, t, schedule.mean_loss)
            if not math.isfinite(loss):
                raise TrainingDivergedError(step, lr, idx, loss)
            grads = backward(weights, caches, core.l2_loss_backward(out, t, schedule.mean_loss))
            if schedule.grad_clip is not None:
                grads = _clip(grads, schedule.grad_clip)
            params, adam = core.adam_step(trained.params(), grads, adam, lr=lr)
            weights = trained.with_params(params)
            step += 1
            trace.append(step, epoch, lr, loss)
            if checkpoint_path and schedule.checkpoint_every and (
                    step % schedule.checkpoint_every == 0 or step == total):
                save_checkpoint(checkpoint_path, weights, adam, step, schedule, trace)
            if callback is not None:
                callback(step, epoch, weights)
            if step % per_epoch == 0:
                log.info("epoch %d done: mean loss %.6g", epoch, trace.epoch_means()[epoch])
    return weights, adam, trace


def train(weights: NetworkWeights, dataset: ResidualDataset, schedule: TrainSchedule,
          checkpoint_path=None, deterministic: bool = True, callback=None):
    """Train ``weights`` on residual targets. Returns ``(weights, LossTrace)``.

    ``callback(step, epoch, weights)`` runs after every optimizer step.
    """
    adam = AdamState.zeros_like(weights.params(), lr=schedule.lr_at(0), beta1=schedule.beta1,
                                beta2=schedule.beta2, eps=schedule.adam_eps)
    weights, _, trace = _run(weights, adam, 0, LossTrace(), dataset, schedule,
                             checkpoint_path, deterministic, callback)
    return weights, trace


def resume(checkpoint_path, dataset: ResidualDataset, schedule: TrainSchedule,
           deterministic: bool = True, callback=None):
    """Continue a checkpointed run to the end of ``schedule``."""
    weights, adam, step, digest, trace = load_checkpoint(checkpoint_path)
    if digest != schedule.digest():
        raise CheckpointError("checkpoint was written under a different schedule")
    per_epoch, total = _total_steps(len(dataset), schedule)
    if schedule.max_steps is not None:
        total = min(total, schedule.max_steps)
    if step >= total:
        warnings.warn(f"checkpoint at step {step} is already past the schedule end ({total})")
        return weights, trace
    weights, _, trace = _run(weights, adam, step, trace, dataset, schedule,
                             checkpoint_path, deterministic, callback)
    return weights, trace


# -- checkpoint files -------------------------------------------------------------------

CKPT_MAGIC = b"VDCK"
CKPT_VERSION = 1
_CK_HEAD = struct.Struct("<4sHI")
_CK_OPT = struct.Struct("<QQdddd")
_CK_TRACE = struct.Struct("<QIdd")


def checkpoint_to_bytes(weights, adam: AdamState, step: int, schedule: TrainSchedule,
                        trace: LossTrace) -> bytes:
    wblob = weights_to_bytes(weights)
    parts = [_CK_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(wblob)), wblob,
             _CK_OPT.pack(step, adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps)]
    for a in adam.m + adam.v:
        parts.append(np.ascontiguousarray(a, "<f4").tobytes())
    parts.append(schedule.digest())
    parts.append(struct.pack("<I", len(trace.steps)))
    for row in zip(trace.steps, trace.epochs, trace.lrs, trace.losses):
        parts.append(_CK_TRACE.pack(*row))
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def checkpoint_from_bytes(blob: bytes):
    try:
        if len(blob) < _CK_HEAD.size + 4:
            raise CheckpointError("checkpoint truncated")
        (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
        if zlib.crc32(blob[:-4]) != crc:
            raise CheckpointError("checkpoint CRC32 mismatch")
        magic, version, wlen = _CK_HEAD.unpack_from(blob)
        if magic != CKPT_MAGIC or version != CKPT_VERSION:
            raise CheckpointError(f"not a checkpoint (magic {magic!r}, version {version})")
        off = _CK_HEAD.size
        weights = weights_from_bytes(blob[off:off + wlen])
        off += wlen
        step, t, lr, b1, b2, eps = _CK_OPT.unpack_from(blob, off)
        off += _CK_OPT.size
        moments = []
        for p in weights.params() * 2:
            nbytes = 4 * p.size
            moments.append(np.frombuffer(blob, "<f4", p.size, off).reshape(p.shape).astype(np.float32))
            off += nbytes
        half = len(moments) // 2
        adam = AdamState(moments[:half], moments[half:], t, lr, b1, b2, eps)
        digest = blob[off:off + 32]
        off += 32
        (n_trace,) = struct.unpack_from("<I", blob, off)
        off += 4
        trace = LossTrace()
        for _ in range(n_trace):
            s, e, r, loss = _CK_TRACE.unpack_from(blob, off)
            off += _CK_TRACE.size
            trace.append(s, e, r, loss)
        if off != len(blob) - 4:
            raise CheckpointError("trailing bytes in checkpoint")
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    except WeightFileError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt weights inside checkpoint: {exc}") from exc
    return weights, adam, step, digest, trace


def save_checkpoint(path, weights, adam, step, schedule, trace) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(weights, adam, step, schedule, trace))
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(weights, adam_state, step, schedule_digest, trace)``."""
    return checkpoint_from_bytes(Path(path).read_bytes())


# -- evaluation ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    mean_psnr: float
    mean_ssim: float
    count: int
    n_infinite: int = 0


def evaluate_epoch(weights: NetworkWeights, pairs: Sequence) -> EvalResult:
    """Mean PSNR/SSIM of denoised held-out patches against their clean versions.

    Identical (infinite-PSNR) results are counted but left out of the PSNR mean.
    """
    p_vals, s_vals, n_inf = [], [], 0
    for pair in pairs:
        if isinstance(pair, TripletPatchPair):
            x, clean = pair.input, pair.clean_center
            w = x.shape[-1] // 3
            center = x[..., 3 * (w // 2):3 * (w // 2) + 3]
        elif isinstance(pair, PatchPair):
            x = center = pair.noisy
            clean = pair.clean
        else:
            raise TypeError(f"unsupported pair type {type(pair)!r}")
        out = np.clip(center - forward_residual(weights, x), 0.0, 1.0)
        p = psnr(clean, out)
        if math.isinf(p):
            n_inf += 1
        else:
            p_vals.append(p)
        s_vals.append(ssim(clean, out))
    mean_p = float(np.mean(p_vals)) if p_vals else (math.inf if n_inf else math.nan)
    return EvalResult(mean_p, float(np.mean(s_vals)) if s_vals else math.nan, len(s_vals), n_inf)
