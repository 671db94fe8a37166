"""End-to-end acceptance criteria, one test per criterion.

Each test prints ``ACCEPTANCE <n> PASS|FAIL: <measurement>`` (also repeated in
the pytest terminal summary). Run alone with ``pytest tests/test_acceptance.py -s``.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import psnr_naive, seeded_pair, ssim_naive
from videnn import data, gradcheck, metrics, networks, noise, synthetic, training
from videnn.noise import AwgnParams, NoiseSpec, SensorNoiseParams

pytestmark = pytest.mark.acceptance

# tolerances, all fixed up front
NOISE_STD_REL_TOL = 0.01
NOISE_SAMPLES = 10 ** 6
NOISE_BUDGET_S = 30.0
GRAD_TOL = 1e-5
GRAD_BUDGET_S = 120.0
METRIC_ABS_TOL = 1e-9
OFFSET_PSNR_DB, OFFSET_TOL_DB = 24.05, 0.01
AVG_GAIN_DB, AVG_TOL_DB, AVG_TRIALS = 10 * math.log10(3), 0.3, 100
OVERFIT_MIN_GAIN_DB, OVERFIT_MAX_STEPS, OVERFIT_BUDGET_S = 6.0, 2000, 600.0
PIPELINE_MIN_GAIN_DB = 0.2
DETERMINISM_STEPS = 500


def report(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def sched(n_items, steps, lr, batch, **kw):
    per_epoch = max(1, n_items // batch)
    epochs = math.ceil(steps / per_epoch)
    return training.TrainSchedule(epochs=epochs, batch_size=batch, lr_segments=[(epochs, lr)],
                                  max_steps=steps, **kw)


# 1 -------------------------------------------------------------------------------------------

def scalar_noise_std(s, ag, dg, ct1n=1.25e-4, ct2n=1.11e-4, nsat=7489.0):
    return math.sqrt(ag * dg / (nsat * s) + dg * dg * (ag * ct1n + ct2n) ** 2)


def test_1_noise_model_fidelity():
    t0 = time.perf_counter()
    points = [(0.5, 64.0, 4.0)] + [(s, ag, dg) for s in (0.1, 0.5, 0.9)
                                   for ag, dg in ((1, 1), (16, 2), (64, 4), (32, 32))]
    side = int(math.isqrt(NOISE_SAMPLES))
    worst = 0.0
    for i, (s, ag, dg) in enumerate(points):
        field = noise.sensor_noise_field(np.full((side, side), s), SensorNoiseParams(ag, dg), seed=i)
        worst = max(worst, abs(field.std() / scalar_noise_std(s, ag, dg) - 1))
    elapsed = time.perf_counter() - t0
    report(1, worst < NOISE_STD_REL_TOL and elapsed < NOISE_BUDGET_S and len(points) == 13,
           f"reference point + 12-point grid, worst relative std error {worst:.4%} "
           f"(tol {NOISE_STD_REL_TOL:.0%}), {elapsed:.1f}s (budget {NOISE_BUDGET_S:.0f}s)")


# 2 -------------------------------------------------------------------------------------------

def test_2_gradient_check():
    t0 = time.perf_counter()
    results = gradcheck.run_gradcheck(seed=0)
    elapsed = time.perf_counter() - t0
    worst_op = max(results, key=results.get)
    report(2, results[worst_op] < GRAD_TOL and elapsed < GRAD_BUDGET_S,
           f"{len(results)} checks, worst {worst_op} = {results[worst_op]:.2e} (tol {GRAD_TOL:.0e}), "
           f"{elapsed:.1f}s (budget {GRAD_BUDGET_S:.0f}s)")


# 3 -------------------------------------------------------------------------------------------

def test_3_residual_identity():
    spatial = networks.build_network(networks.spatial_spec(depth=4, first_width=8, mid_width=8), 1)
    temporal = networks.build_network(networks.temporal_spec(3, depth=4, first_width=8, mid_width=8), 2)
    spatial, temporal = spatial.zero_last_layer(), temporal.zero_last_layer()
    rng = np.random.default_rng(0)
    frames = [rng.random((12, 14, 3)) for _ in range(10)]
    ok = all(np.array_equal(networks.denoise_frame(spatial, f), f) for f in frames)
    ok &= np.array_equal(networks.denoise_window(temporal, frames[:3]), frames[1])
    lengths = []
    for n in (1, 2, 3, 10):
        out = networks.videnn_denoise_video(networks.VidennPipeline(spatial, temporal), frames[:n])
        lengths.append(len(out))
        ok &= len(out) == n and all(np.array_equal(a, b) for a, b in zip(out, frames[:n]))
    report(3, bool(ok), f"zero-residual nets reproduce inputs exactly; output lengths {lengths} "
                        f"for N in [1, 2, 3, 10]")


# 4 -------------------------------------------------------------------------------------------

def test_4_metric_oracles():
    worst = 0.0
    for seed in range(20):
        a, b = seeded_pair(seed)
        worst = max(worst, abs(metrics.psnr(a, b) - psnr_naive(a, b)),
                    abs(metrics.ssim(a, b) - ssim_naive(a, b)))
    frame = np.full((32, 32, 3), 0.25)
    offset = metrics.psnr(frame, frame + 16 / 255)
    ok = worst < METRIC_ABS_TOL and abs(offset - OFFSET_PSNR_DB) <= OFFSET_TOL_DB
    report(4, ok, f"20 pairs, worst |lib - naive| {worst:.1e} (tol {METRIC_ABS_TOL:.0e}); "
                  f"16/255 offset PSNR {offset:.4f} dB (want {OFFSET_PSNR_DB} +/- {OFFSET_TOL_DB})")


# 5 -------------------------------------------------------------------------------------------

def test_5_temporal_average_law():
    clean = synthetic.make_scene(48, 48, seed=11)
    gains = []
    for t in range(AVG_TRIALS):
        noisy = [noise.apply_awgn(clean, AwgnParams(25), seed=(t, k)) for k in range(3)]
        avg = networks.temporal_average_baseline(noisy)[1]
        gains.append(metrics.psnr(clean, avg) - metrics.psnr(clean, noisy[1]))
    gain = float(np.mean(gains))
    report(5, abs(gain - AVG_GAIN_DB) <= AVG_TOL_DB,
           f"mean gain over {AVG_TRIALS} trials {gain:.3f} dB (want {AVG_GAIN_DB:.2f} +/- {AVG_TOL_DB})")


# 6 -------------------------------------------------------------------------------------------

def test_6_toy_overfit():
    t0 = time.perf_counter()
    clean = [synthetic.make_scene(50, 50, seed=s) for s in range(8)]
    pairs = [data.PatchPair(noise.apply_awgn(c, AwgnParams(25), seed=i), c, None)
             for i, c in enumerate(clean)]
    ds = data.ResidualDataset.from_pairs(pairs)
    spec = networks.spatial_spec(depth=5, first_width=16, mid_width=16)
    steps = 1500
    weights, _ = training.train(networks.build_network(spec, 0), ds, sched(8, steps, 1e-2, 8))
    before = float(np.mean([metrics.psnr(p.clean, p.noisy) for p in pairs]))
    after = training.evaluate_epoch(weights, pairs).mean_psnr
    elapsed = time.perf_counter() - t0
    gain = after - before
    report(6, gain >= OVERFIT_MIN_GAIN_DB and steps <= OVERFIT_MAX_STEPS and elapsed < OVERFIT_BUDGET_S,
           f"{before:.2f} -> {after:.2f} dB, gain {gain:.2f} dB (min {OVERFIT_MIN_GAIN_DB}) "
           f"in {steps} steps, {elapsed:.0f}s (budget {OVERFIT_BUDGET_S:.0f}s)")


# 7 and 9 share one toy-trained pipeline -------------------------------------------------------

@pytest.fixture(scope="module")
def toy_pipeline():
    mix = noise.NoiseMix(p_awgn=1.0, sigma_range=(25.0, 25.0))
    videos = [synthetic.make_video(12, 64, 64, seed=100 + i, speed=0.5) for i in range(6)]
    frames = [f for v in videos for f in v]
    _, pairs = data.build_spatial_dataset(frames, mix, patch_count=64, seed=1)
    spatial, _ = training.train(
        networks.build_network(networks.spatial_spec(depth=5, first_width=16, mid_width=16), 0),
        data.ResidualDataset.from_pairs(pairs), sched(64, 1000, 1e-2, 8))
    _, tpairs = data.build_temporal_dataset(videos, spatial, mix, patch_count=256, seed=2)
    temporal = networks.build_network(networks.temporal_spec(3, depth=5, first_width=16, mid_width=16), 0)
    # start from the identity denoiser and drop lr 10x after 19 epochs (608 steps)
    step_down = training.TrainSchedule(epochs=38, batch_size=8, lr_segments=[(19, 5e-3), (19, 5e-4)],
                                       max_steps=1200)
    temporal, _ = training.train(temporal.zero_last_layer(), data.ResidualDataset.from_pairs(tpairs),
                                 step_down)
    return spatial, temporal


def noisy_test_video(sigma, seed=7):
    clean = synthetic.make_video(20, 64, 64, seed=999, speed=0.5)
    spec = NoiseSpec(AwgnParams(sigma), seed)
    return clean, [noise.apply_noise(f, spec, seed=(seed, i)) for i, f in enumerate(clean)]


def test_7_pipeline_ordering(toy_pipeline):
    spatial, temporal = toy_pipeline
    clean, noisy = noisy_test_video(25)
    p_noisy = metrics.evaluate_video(clean, noisy).mean_psnr
    p_spatial = metrics.evaluate_video(clean, networks.denoise_video(noisy, "spatial", spatial)).mean_psnr
    p_full = metrics.evaluate_video(clean, networks.denoise_video(noisy, "full", spatial, temporal)).mean_psnr
    gain = p_full - p_spatial
    report(7, gain >= PIPELINE_MIN_GAIN_DB,
           f"20-frame near-static scene, sigma 25: noisy {p_noisy:.2f}, spatial-only {p_spatial:.2f}, "
           f"spatial->temporal {p_full:.2f} dB; gain {gain:+.2f} dB (min +{PIPELINE_MIN_GAIN_DB})")


# 8 -------------------------------------------------------------------------------------------

def test_8_determinism(tmp_path):
    rng = np.random.default_rng(5)
    clean = [synthetic.make_scene(32, 32, seed=s) for s in range(8)]
    pairs = [data.PatchPair(noise.apply_awgn(c, AwgnParams(float(rng.uniform(5, 50))), seed=i), c, None)
             for i, c in enumerate(clean)]
    ds = data.ResidualDataset.from_pairs(pairs)
    spec = networks.spatial_spec(depth=5, first_width=16, mid_width=16)
    s = sched(8, DETERMINISM_STEPS, 1e-3, 4, shuffle_seed=3, checkpoint_every=137)

    blobs = []
    for name in ("a", "b"):
        w, trace = training.train(networks.build_network(spec, 42), ds, s, deterministic=True)
        networks.save_weights(w, tmp_path / f"{name}.vdnn")
        blobs.append((tmp_path / f"{name}.vdnn").read_bytes())
    same_files = blobs[0] == blobs[1]

    ck = tmp_path / "cut.ckpt"
    cut = sched(8, DETERMINISM_STEPS, 1e-3, 4, shuffle_seed=3, checkpoint_every=137)
    cut.max_steps = 211
    training.train(networks.build_network(spec, 42), ds, cut, checkpoint_path=ck)
    resumed, rtrace = training.resume(ck, ds, s)
    same_resume = networks.weights_to_bytes(resumed) == networks.weights_to_bytes(w) and rtrace == trace
    report(8, same_files and same_resume,
           f"two {DETERMINISM_STEPS}-step runs byte-identical: {same_files}; "
           f"interrupt at step 211 (last checkpoint 137) + resume == uninterrupted: {same_resume}")


# 9 -------------------------------------------------------------------------------------------

NON_REPRODUCIBILITY_NOTE = (
    "Absolute PSNRs of the full-scale results (e.g. ~31 dB for the spatial network at "
    "sigma=25 on CBSD68) need the full training corpora and 100-epoch training; they are out "
    "of scope here. The table below has the same shape, filled with toy-scale numbers.")


def test_9_report_shape(toy_pipeline, tmp_path):
    spatial, temporal = toy_pipeline
    sigmas = [15, 25, 40]
    results = {"Noisy": {}, "Average (3 frames)": {}, "Spatial (toy)": {}, "Spatial+Temporal (toy)": {}}
    for sigma in sigmas:
        clean, noisy = noisy_test_video(sigma, seed=20 + sigma)
        results["Noisy"][sigma] = metrics.evaluate_video(clean, noisy).mean_psnr
        for label, mode in (("Average (3 frames)", "average"), ("Spatial (toy)", "spatial"),
                            ("Spatial+Temporal (toy)", "full")):
            out = networks.denoise_video(noisy, mode, spatial, temporal)
            results[label][sigma] = metrics.evaluate_video(clean, out).mean_psnr
    table = metrics.noise_level_table(results, sigmas)
    path = tmp_path / "report.md"
    path.write_text(NON_REPRODUCIBILITY_NOTE + "\n\n" + table + "\n")
    text = path.read_text()
    header_ok = all(f"sigma={s}" in text for s in sigmas)
    rows_ok = all(label in text for label in results)
    print(table)
    report(9, header_ok and rows_ok and "out of scope" in text,
           "non-reproducibility note emitted; PSNR table over sigma " + str(sigmas) + " with rows "
           + ", ".join(f"{k}={results[k][25]:.2f}" for k in results) + " (sigma 25)")
