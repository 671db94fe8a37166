"""PSNR and SSIM for frames in ``[0, 1]``, plus per-video aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical frames."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak ** 2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the two leading axes
    tmp = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(tmp, g.size, axis=1) @ g


def ssim_map(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
             peak: float = 1.0) -> np.ndarray:
    """Local SSIM over every full window position, per channel ``(H', W', C)``."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"frame {a.shape[:2]} smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         peak: float = 1.0) -> float:
    """Mean local SSIM with a Gaussian window, averaged over channels."""
    return float(ssim_map(a, b, window, sigma, k1, k2, peak).mean())


@dataclass
class MetricReport:
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.psnr)

    @property
    def n_infinite(self) -> int:
        return sum(math.isinf(p) for p in self.psnr)

    @property
    def mean_psnr(self) -> float:
        """Mean over finite values; ``inf`` if every frame is a perfect match."""
        finite = [p for p in self.psnr if not math.isinf(p)]
        if not finite:
            return math.inf if self.psnr else math.nan
        return float(np.mean(finite))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_index", "psnr_db", "ssim"])
            for i, (p, s) in enumerate(zip(self.psnr, self.ssim)):
                w.writerow([i, _fmt(p), repr(s)])
            w.writerow(["mean", _fmt(self.mean_psnr), repr(self.mean_ssim)])
            if self.n_infinite:
                w.writerow([f"# {self.n_infinite} identical frame(s) excluded from mean PSNR"])


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(x)


def evaluate_video(ref_frames, test_frames, **ssim_kw) -> MetricReport:
    if len(ref_frames) != len(test_frames):
        raise ValueError(f"sequence lengths differ: {len(ref_frames)} vs {len(test_frames)}")
    report = MetricReport()
    for r, t in zip(ref_frames, test_frames):
        report.psnr.append(psnr(r, t))
        report.ssim.append(ssim(r, t, **ssim_kw))
    return report


def noise_level_table(results: dict, sigmas) -> str:
    """Markdown table shaped like a method-by-noise-level PSNR comparison.

    ``results`` maps a row label to ``{sigma: psnr_db}``; missing cells print as '-'.
    """
    head = "| | " + " | ".join(f"sigma={s:g}" for s in sigmas) + " |"
    sep = "|---" * (len(sigmas) + 1) + "|"
    rows = [head, sep]
    for label, cells in results.items():
        vals = [f"{cells[s]:.2f}" if s in cells else "-" for s in sigmas]
        rows.append(f"| {label} | " + " | ".join(vals) + " |")
    return "\n".join(rows)
