"""
Overfitting a small spatial denoiser
====================================

A five-layer network learns the noise residual of eight fixed patches.
Takes a couple of minutes on one CPU core.
"""

import numpy as np

from videnn import data, metrics, networks, noise, synthetic, training
from videnn.noise import AwgnParams

clean = [synthetic.make_scene(50, 50, seed=s) for s in range(8)]
pairs = [data.PatchPair(noise.apply_awgn(c, AwgnParams(25), seed=i), c, None)
         for i, c in enumerate(clean)]
dataset = data.ResidualDataset.from_pairs(pairs)

spec = networks.spatial_spec(depth=5, first_width=16, mid_width=16)
weights = networks.build_network(spec, init_seed=0)
schedule = training.TrainSchedule(epochs=1500, batch_size=8, lr_segments=[(1500, 1e-2)])


def progress(step, epoch, w):
    if step % 250 == 0:
        print(f"step {step:5d}  PSNR {training.evaluate_epoch(w, pairs).mean_psnr:.2f} dB")


print("noisy input:", round(np.mean([metrics.psnr(p.clean, p.noisy) for p in pairs]), 2), "dB")
weights, trace = training.train(weights, dataset, schedule, callback=progress)
print("loss first/last:", round(trace.losses[0], 2), round(trace.losses[-1], 2))

# Weight files are byte-stable: save, load, save again gives the same bytes
networks.save_weights(weights, "toy_spatial.vdnn")
print("reloaded equal:", networks.load_weights("toy_spatial.vdnn").equals(weights))
