"""
Sensor noise versus white Gaussian noise
========================================

The sensor model makes the noise level depend on the signal: dark pixels get
relatively more noise than bright ones, and both gains scale it up. AWGN adds
the same spread everywhere.
"""

import numpy as np

from videnn import noise, synthetic
from videnn.noise import AwgnParams, NoiseSpec, SensorNoiseParams

# Noise std at a few signal levels for the strongest analog gain setting
params = SensorNoiseParams(ag=64, dg=4)
for s in (0.05, 0.25, 0.5, 1.0):
    print(f"s={s:4.2f}  std={noise.noise_scale(s, params):.4f}")

# An empirical check: a flat mid-grey frame, one million pixels
field = noise.sensor_noise_field(np.full((1000, 1000), 0.5), params, seed=0)
print("empirical std at s=0.5:", round(float(field.std()), 4))

# Degrade a synthetic frame both ways. Each spec carries its own seed,
# so the same spec always gives the same noisy frame.
frame = synthetic.make_scene(64, 64, seed=1)
for spec in (NoiseSpec(AwgnParams(25), seed=1), NoiseSpec(params, seed=1)):
    noisy = noise.apply_noise(frame, spec)
    print(spec.encode(), "-> residual std", round(float((noisy - frame).std()), 4))

# Blind training draws a fresh degradation per image
rng = np.random.default_rng(0)
print([noise.sample_noise_spec(rng).encode()[:24] for _ in range(4)])
