"""Training data: random crops, dihedral augmentation, blind noisy/clean pairing,
ground truth by averaging, and the temporal triplet dataset.

Every source image (or 3-frame sequence) gets its own RNG stream derived from
``(seed, unit_index)``, so a dataset is fully determined by its corpus, seed and
configuration, and any patch can be regenerated from its manifest record.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import io
from .networks import NetworkWeights, denoise_frame
from .noise import NoiseMix, NoiseSpec, apply_noise, sample_noise_spec

PATCH_SIZE = 50


# -- dihedral augmentation -------------------------------------------------------------

def augment(patch: np.ndarray, code: int) -> np.ndarray:
    """Apply dihedral op ``code`` (0-7): ``code % 4`` quarter turns, then a
    left-right flip when ``code >= 4``."""
    if patch.shape[0] != patch.shape[1]:
        raise ValueError(f"augmentation needs a square patch, got {patch.shape[:2]}")
    if not 0 <= code < 8:
        raise ValueError(f"augment code must be in 0..7, got {code}")
    out = np.rot90(patch, code % 4, axes=(0, 1))
    if code >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def _build_tables():
    probe = np.arange(9).reshape(3, 3)
    images = [augment(probe, c).tobytes() for c in range(8)]
    compose = np.empty((8, 8), dtype=int)
    for a in range(8):
        for b in range(8):
            compose[a, b] = images.index(augment(augment(probe, b), a).tobytes())
    inverse = [int(np.flatnonzero(compose[a] == 0)[0]) for a in range(8)]
    return compose, inverse


#: ``COMPOSE[a, b]`` is the op equal to applying ``b`` and then ``a``.
COMPOSE, INVERSE = _build_tables()


def augment_inverse(code: int) -> int:
    return INVERSE[code]


# -- patches ---------------------------------------------------------------------------

def extract_patches(image: np.ndarray, size: int = PATCH_SIZE, count: int = 1,
                    rng: Optional[np.random.Generator] = None):
    """``count`` uniformly random ``size x size`` crops as ``(patch, (y, x))``."""
    rng = np.random.default_rng() if rng is None else rng
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than patch size {size}")
    out = []
    for _ in range(count):
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        out.append((image[y:y + size, x:x + size], (y, x)))
    return out


def average_ground_truth(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Pixelwise mean of repeated captures of a static scene (float64 accumulation)."""
    if len(frames) == 0:
        raise ValueError("no frames to average")
    shape = np.shape(frames[0])
    acc = np.zeros(shape, dtype=np.float64)
    for f in frames:
        if np.shape(f) != shape:
            raise ValueError(f"mixed frame dimensions: {np.shape(f)} vs {shape}")
        acc += f
    return acc / len(frames)


def split_train_test(items: Sequence, seed: int, train_fraction: float = 0.7):
    """Seeded shuffle then split by item."""
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(train_fraction * len(items)))
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


# -- manifests ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    source: str
    y: int
    x: int
    augment: int
    noise: str
    seed: int

    def line(self) -> str:
        return "\t".join(map(str, (self.source, self.y, self.x, self.augment, self.noise, self.seed)))

    @classmethod
    def parse(cls, line: str) -> "ManifestRecord":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 6:
            raise ValueError(f"manifest line has {len(parts)} fields, expected 6: {line!r}")
        src, y, x, aug, noise, seed = parts
        return cls(src, int(y), int(x), int(aug), noise, int(seed))

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec.decode(self.noise, self.seed)


@dataclass
class DatasetManifest:
    records: List[ManifestRecord] = field(default_factory=list)
    kind: str = "spatial"
    split: str = "train"
    patch_size: int = PATCH_SIZE

    def __len__(self):
        return len(self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# kind={self.kind}\tsplit={self.split}\tpatch_size={self.patch_size}"
                     f"\tcount={len(self.records)}\n")
            for r in self.records:
                fh.write(r.line() + "\n")

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        meta = {}
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    meta.update(kv.split("=", 1) for kv in line[1:].strip().split("\t") if "=" in kv)
                elif line.strip():
                    records.append(ManifestRecord.parse(line))
        return cls(records, meta.get("kind", "spatial"), meta.get("split", "train"),
                   int(meta.get("patch_size", PATCH_SIZE)))


@dataclass
class PatchPair:
    noisy: np.ndarray
    clean: np.ndarray
    noise_spec: NoiseSpec


@dataclass
class TripletPatchPair:
    input: np.ndarray        # (size, size, 3 * window), temporal order
    clean_center: np.ndarray
    noise_spec: NoiseSpec


def _named_images(sources) -> List[Tuple[str, np.ndarray]]:
    out = []
    for i, src in enumerate(sources):
        if isinstance(src, (str, Path)):
            out.append((str(src), io.read_png(src)))
        else:
            name, img = src if isinstance(src, tuple) else (f"mem:{i}", src)
            out.append((name, np.asarray(img, dtype=np.float64)))
    return out


def _split_count(total: int, units: int) -> List[int]:
    base, extra = divmod(total, units)
    return [base + (i < extra) for i in range(units)]


# -- spatial dataset ------------------------------------------------------------------------

def build_spatial_dataset(sources, mix: NoiseMix = NoiseMix(), patch_count: int = 1000,
                          seed: int = 0, size: int = PATCH_SIZE, split: str = "train"):
    """Blind noisy/clean patch pairs from clean images.

    ``sources`` holds PNG paths, ``(name, array)`` tuples or bare arrays. One
    degradation is drawn per image; the noisy image is synthesized whole, then
    co-cropped and co-augmented with the clean one.
    """
    images = _named_images(sources)
    if not images:
        raise ValueError("empty image corpus")
    records, pairs = [], []
    for i, ((name, clean), n) in enumerate(zip(images, _split_count(patch_count, len(images)))):
        rng = np.random.default_rng([seed, i])
        spec = sample_noise_spec(rng, mix)
        noisy = apply_noise(clean, spec)
        for _, (y, x) in extract_patches(clean, size, n, rng):
            code = int(rng.integers(8))
            records.append(ManifestRecord(name, y, x, code, spec.encode(), spec.seed))
            pairs.append(PatchPair(augment(noisy[y:y + size, x:x + size], code),
                                   augment(clean[y:y + size, x:x + size], code), spec))
    return DatasetManifest(records, "spatial", split, size), pairs


def regenerate_spatial(manifest: DatasetManifest, sources) -> List[PatchPair]:
    """Rebuild every pair of a spatial manifest from the clean images."""
    images = dict(_named_images(sources))
    noisy_cache = {}
    size = manifest.patch_size
    pairs = []
    for r in manifest.records:
        clean = images[r.source]
        key = (r.source, r.noise, r.seed)
        if key not in noisy_cache:
            noisy_cache[key] = apply_noise(clean, r.noise_spec)
        noisy = noisy_cache[key]
        sl = (slice(r.y, r.y + size), slice(r.x, r.x + size))
        pairs.append(PatchPair(augment(noisy[sl], r.augment), augment(clean[sl], r.augment),
                               r.noise_spec))
    return pairs


# -- temporal dataset -----------------------------------------------------------------------

def _named_videos(videos) -> List[Tuple[str, List[np.ndarray]]]:
    out = []
    for i, v in enumerate(videos):
        if isinstance(v, (str, Path)):
            out.append((str(v), io.read_frames(v)))
        elif isinstance(v, tuple):
            out.append((v[0], [np.asarray(f, dtype=np.float64) for f in v[1]]))
        else:
            out.append((f"mem:{i}", [np.asarray(f, dtype=np.float64) for f in v]))
    return out


def split_sequences(videos, window: int = 3) -> List[Tuple[str, int, List[np.ndarray]]]:
    """Non-overlapping ``window``-frame sequences ``(video_name, start, frames)``.

    Videos shorter than ``window`` are skipped with a warning; trailing frames
    that do not fill a sequence are dropped.
    """
    seqs = []
    for name, frames in _named_videos(videos):
        if len(frames) < window:
            warnings.warn(f"skipping {name}: {len(frames)} frame(s), need at least {window}")
            continue
        shape = frames[0].shape
        if any(f.shape != shape for f in frames):
            raise ValueError(f"mixed frame dimensions in video {name}")
        for start in range(0, len(frames) - window + 1, window):
            seqs.append((name, start, frames[start:start + window]))
    return seqs


def _triplet_unit(frames, spec: NoiseSpec, spatial: NetworkWeights):
    # independent realizations per frame under one degradation
    noisy = [apply_noise(f, spec, seed=(spec.seed, k)) for k, f in enumerate(frames)]
    return [denoise_frame(spatial, f) for f in noisy]


def build_temporal_dataset(videos, spatial_net: NetworkWeights, mix: NoiseMix = NoiseMix(),
                           patch_count: int = 1000, seed: int = 0, size: int = PATCH_SIZE,
                           window: int = 3, split: str = "train"):
    """Stacked spatially-denoised patches paired with the clean center patch.

    Videos are cut into non-overlapping ``window``-frame sequences; each
    sequence is degraded under one drawn spec, every frame is spatially
    denoised, and aligned crops are taken across the sequence.
    """
    seqs = split_sequences(videos, window)
    if not seqs:
        raise ValueError(f"no video has {window} or more frames")
    records, pairs = [], []
    for u, ((name, start, frames), n) in enumerate(zip(seqs, _split_count(patch_count, len(seqs)))):
        rng = np.random.default_rng([seed, u])
        spec = sample_noise_spec(rng, mix)
        denoised = _triplet_unit(frames, spec, spatial_net) if n else None
        clean_center = frames[window // 2]
        for _, (y, x) in extract_patches(clean_center, size, n, rng):
            code = int(rng.integers(8))
            sl = (slice(y, y + size), slice(x, x + size))
            stack = np.concatenate([augment(d[sl], code) for d in denoised], axis=-1)
            records.append(ManifestRecord(f"{name}@{start}", y, x, code, spec.encode(), spec.seed))
            pairs.append(TripletPatchPair(stack, augment(clean_center[sl], code), spec))
    return DatasetManifest(records, "temporal", split, size), pairs


def regenerate_temporal(manifest: DatasetManifest, videos, spatial_net: NetworkWeights,
                        window: int = 3) -> List[TripletPatchPair]:
    named = dict(_named_videos(videos))
    cache = {}
    size = manifest.patch_size
    pairs = []
    for r in manifest.records:
        name, _, start = r.source.rpartition("@")
        frames = named[name][int(start):int(start) + window]
        key = (r.source, r.noise, r.seed)
        if key not in cache:
            cache[key] = _triplet_unit(frames, r.noise_spec, spatial_net)
        sl = (slice(r.y, r.y + size), slice(r.x, r.x + size))
        stack = np.concatenate([augment(d[sl], r.augment) for d in cache[key]], axis=-1)
        pairs.append(TripletPatchPair(stack, augment(frames[window // 2][sl], r.augment),
                                      r.noise_spec))
    return pairs


# -- training arrays ------------------------------------------------------------------------

@dataclass
class ResidualDataset:
    """Network inputs with their residual targets (input or center minus clean)."""

    inputs: np.ndarray   # (N, h, w, c_in)
    targets: np.ndarray  # (N, h, w, 3)

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("empty dataset")
        if self.inputs.shape[:3] != self.targets.shape[:3] or self.targets.shape[-1] != 3:
            raise ValueError(f"inputs {self.inputs.shape} and targets {self.targets.shape} "
                             "are not aligned")

    def __len__(self):
        return len(self.inputs)

    @property
    def channels(self) -> int:
        return self.inputs.shape[-1]

    @property
    def centers(self) -> np.ndarray:
        """The frame the residual is subtracted from (middle of the stack)."""
        c = self.channels // 3
        return self.inputs[..., 3 * (c // 2):3 * (c // 2) + 3]

    @property
    def clean(self) -> np.ndarray:
        return self.centers - self.targets

    @classmethod
    def from_pairs(cls, pairs: Iterable, dtype=np.float32) -> "ResidualDataset":
        pairs = list(pairs)
        if pairs and isinstance(pairs[0], TripletPatchPair):
            inputs = np.stack([p.input for p in pairs])
            clean = np.stack([p.clean_center for p in pairs])
        else:
            inputs = np.stack([p.noisy for p in pairs])
            clean = np.stack([p.clean for p in pairs])
        c = inputs.shape[-1] // 3
        centers = inputs[..., 3 * (c // 2):3 * (c // 2) + 3]
        return cls(inputs.astype(dtype), (centers - clean).astype(dtype))

    def save(self, path) -> None:
        np.savez(path, inputs=self.inputs, targets=self.targets)

    @classmethod
    def load(cls, path) -> "ResidualDataset":
        with np.load(path) as z:
            return cls(z["inputs"], z["targets"])
