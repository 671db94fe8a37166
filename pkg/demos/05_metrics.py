"""
PSNR and SSIM
=============
"""

import numpy as np

from videnn import metrics, networks, noise, synthetic
from videnn.noise import AwgnParams

# A constant offset of 16 grey levels: 10*log10(255^2 / 16^2)
a = np.full((32, 32, 3), 0.25)
print("offset PSNR:", round(metrics.psnr(a, a + 16 / 255), 4))

# Identical frames have infinite PSNR; such frames are counted but left out of means
print("identical:", metrics.psnr(a, a), metrics.ssim(a, a))

# Averaging three independent noisy captures of a static scene gains about 4.77 dB
clean = synthetic.make_scene(48, 48, seed=3)
frames = [noise.apply_awgn(clean, AwgnParams(25), seed=k) for k in range(3)]
avg = networks.temporal_average_baseline(frames)[1]
print("average gain:", round(metrics.psnr(clean, avg) - metrics.psnr(clean, frames[1]), 2), "dB")

report = metrics.evaluate_video([clean] * 3, frames)
report.write_csv("metrics.csv")
print(open("metrics.csv").read())
