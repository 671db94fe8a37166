"""
Spatial first, then temporal
============================

The temporal network sees three consecutive frames that were already
cleaned by the spatial network and predicts the residual of the middle one.
Here both stages are trained at toy scale on synthetic near-static video
and compared with a plain three-frame average. Roughly three minutes.
"""

from videnn import data, metrics, networks, noise, synthetic, training
from videnn.noise import AwgnParams, NoiseMix, NoiseSpec

mix = NoiseMix(p_awgn=1.0, sigma_range=(25.0, 25.0))
videos = [synthetic.make_video(12, 64, 64, seed=100 + i, speed=0.5) for i in range(6)]

# Stage 1: single-frame network on random crops of every frame
_, pairs = data.build_spatial_dataset([f for v in videos for f in v], mix, patch_count=64, seed=1)
spatial = networks.build_network(networks.spatial_spec(depth=5, first_width=16, mid_width=16), 0)
spatial, _ = training.train(spatial, data.ResidualDataset.from_pairs(pairs),
                            training.TrainSchedule(epochs=125, batch_size=8, lr_segments=[(125, 1e-2)]))

# Stage 2: its outputs, stacked in threes, become the temporal training input
_, triplets = data.build_temporal_dataset(videos, spatial, mix, patch_count=256, seed=2)
temporal = networks.build_network(networks.temporal_spec(3, depth=5, first_width=16, mid_width=16), 0)
temporal, _ = training.train(
    temporal.zero_last_layer(), data.ResidualDataset.from_pairs(triplets),
    training.TrainSchedule(epochs=38, batch_size=8, lr_segments=[(19, 5e-3), (19, 5e-4)],
                           max_steps=1200))

clean = synthetic.make_video(20, 64, 64, seed=999, speed=0.5)
noisy = [noise.apply_noise(f, NoiseSpec(AwgnParams(25), 7), seed=(7, i)) for i, f in enumerate(clean)]
for mode in ("average", "spatial", "temporal-spatial", "full"):
    out = networks.denoise_video(noisy, mode, spatial, temporal)
    print(f"{mode:17s} {metrics.evaluate_video(clean, out).mean_psnr:.2f} dB")
