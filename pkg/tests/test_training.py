import math

import numpy as np
import pytest

from videnn import data, networks, synthetic, training
from videnn.networks import NetworkSpec, build_network
from videnn.noise import AwgnParams, NoiseMix, apply_awgn
from videnn.training import TrainSchedule


def tiny_spec(**kw):
    return NetworkSpec(3, **{"depth": 3, "first_width": 6, "mid_width": 6, **kw})


def make_dataset(n=6, size=12, sigma=25, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        clean = rng.uniform(0.2, 0.8, (size, size, 3))
        pairs.append(data.PatchPair(apply_awgn(clean, AwgnParams(sigma), seed=(seed, i)), clean, None))
    return data.ResidualDataset.from_pairs(pairs), pairs


def sched(epochs, lr=1e-3, bs=2, **kw):
    return TrainSchedule(epochs=epochs, batch_size=bs, lr_segments=[(epochs, lr)], **kw)


def test_schedule_presets_and_lr_switch():
    s = training.spatial_schedule()
    assert s.epochs == 100 and s.batch_size == 128
    assert s.lr_at(19) == 1e-3 and s.lr_at(20) == 1e-4 and s.lr_at(99) == 1e-4
    t = training.temporal_schedule()
    assert t.epochs == 60 and {t.lr_at(e) for e in range(60)} == {1e-4}
    with pytest.raises(ValueError):
        TrainSchedule(epochs=10, lr_segments=[(5, 1e-3)])


def test_lr_switch_recorded_in_trace():
    ds, _ = make_dataset(4)
    s = TrainSchedule(epochs=4, batch_size=2, lr_segments=[(2, 1e-3), (2, 1e-4)])
    _, trace = training.train(build_network(tiny_spec(), 0), ds, s)
    assert trace.steps == list(range(1, 9))
    assert trace.lrs == [1e-3] * 4 + [1e-4] * 4
    assert trace.epochs == [0, 0, 1, 1, 2, 2, 3, 3]


def test_epoch_batches_cover_and_merge_singleton():
    s = sched(1, bs=4)
    batches = training.epoch_batches(9, s, 0)
    assert [len(b) for b in batches] == [4, 5]
    assert sorted(np.concatenate(batches)) == list(range(9))
    assert not np.array_equal(np.concatenate(training.epoch_batches(9, s, 1)), np.concatenate(batches))


def test_overfit_single_patch_without_noise():
    clean = np.random.default_rng(0).uniform(0.2, 0.8, (10, 10, 3))
    ds = data.ResidualDataset.from_pairs([data.PatchPair(clean, clean, None)])
    spec = tiny_spec(use_bn=False)
    _, trace = training.train(build_network(spec, 0), ds, sched(200, lr=1e-2, bs=1))
    assert len(trace.losses) == 200
    assert trace.losses[-1] < 1e-4 * clean.size


def test_identical_seeds_identical_runs(tmp_path):
    ds, _ = make_dataset()
    runs = []
    for _ in range(2):
        w, trace = training.train(build_network(tiny_spec(), 3), ds, sched(3, shuffle_seed=9))
        runs.append((networks.weights_to_bytes(w), trace))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]
    other, _ = training.train(build_network(tiny_spec(), 3), ds, sched(3, shuffle_seed=10))
    assert networks.weights_to_bytes(other) != runs[0][0]


def test_resume_matches_uninterrupted(tmp_path):
    ds, _ = make_dataset()
    full_sched = sched(4, checkpoint_every=5)
    w_full, trace_full = training.train(build_network(tiny_spec(), 1), ds, full_sched)
    ck = tmp_path / "run.ckpt"
    cut = sched(4, checkpoint_every=5, max_steps=5)
    training.train(build_network(tiny_spec(), 1), ds, cut, checkpoint_path=ck)
    assert training.load_checkpoint(ck)[2] == 5
    w_res, trace_res = training.resume(ck, ds, full_sched)
    assert networks.weights_to_bytes(w_res) == networks.weights_to_bytes(w_full)
    assert trace_res == trace_full


def test_checkpoint_roundtrip_and_corruption(tmp_path):
    ds, _ = make_dataset()
    ck = tmp_path / "a.ckpt"
    s = sched(1, checkpoint_every=1)
    w, trace = training.train(build_network(tiny_spec(), 0), ds, s, checkpoint_path=ck)
    lw, adam, step, digest, ltrace = training.load_checkpoint(ck)
    assert lw.equals(w) and step == 3 and digest == s.digest() and ltrace == trace
    assert adam.t == 3
    blob = bytearray(ck.read_bytes())
    blob[len(blob) // 2] ^= 0x01
    ck.write_bytes(bytes(blob))
    with pytest.raises(training.CheckpointError):
        training.load_checkpoint(ck)
    ck.write_bytes(bytes(blob[:40]))
    with pytest.raises(training.CheckpointError):
        training.resume(ck, ds, s)


def test_resume_rejects_other_schedule(tmp_path):
    ds, _ = make_dataset()
    ck = tmp_path / "a.ckpt"
    training.train(build_network(tiny_spec(), 0), ds, sched(2, checkpoint_every=2), checkpoint_path=ck)
    with pytest.raises(training.CheckpointError):
        training.resume(ck, ds, sched(2, lr=5e-4))


def test_resume_past_end_warns(tmp_path):
    ds, _ = make_dataset()
    ck = tmp_path / "a.ckpt"
    s = sched(1, checkpoint_every=1)
    w, trace = training.train(build_network(tiny_spec(), 0), ds, s, checkpoint_path=ck)
    with pytest.warns(UserWarning):
        w2, trace2 = training.resume(ck, ds, s)
    assert w2.equals(w) and trace2 == trace


def test_single_batch_loss_mostly_nonincreasing():
    ds, _ = make_dataset(n=8, size=16)
    _, trace = training.train(build_network(tiny_spec(), 0), ds, sched(50, lr=1e-4, bs=8))
    losses = trace.losses
    assert len(losses) == 50
    violations = sum(b > a for a, b in zip(losses, losses[1:]))
    assert violations <= 0.05 * (len(losses) - 1)
    assert losses[-1] < losses[0]


def test_divergence_raises_with_context():
    ds, _ = make_dataset()
    ds.inputs[0, 0, 0, 0] = np.nan
    with pytest.raises(training.TrainingDivergedError) as info:
        training.train(build_network(tiny_spec(), 0), ds, sched(2, bs=6))
    assert info.value.step == 0 and 0 in info.value.batch_indices
    assert isinstance(info.value, FloatingPointError)


def test_channel_mismatch_rejected():
    ds, _ = make_dataset()
    with pytest.raises(ValueError):
        training.train(build_network(networks.temporal_spec(3, depth=3, first_width=4, mid_width=4), 0),
                       ds, sched(1))


def test_loss_trace_csv(tmp_path):
    ds, _ = make_dataset()
    _, trace = training.train(build_network(tiny_spec(), 0), ds, sched(1))
    trace.write_csv(tmp_path / "loss.csv")
    rows = (tmp_path / "loss.csv").read_text().splitlines()
    assert rows[0] == "step,epoch,lr,loss" and len(rows) == 4
    assert float(rows[-1].split(",")[3]) == trace.losses[-1]
    with pytest.raises(ValueError):
        trace.append(1, 0, 1e-3, 0.0)


def test_evaluate_epoch():
    _, pairs = make_dataset(n=3, size=16)
    zero = build_network(tiny_spec(), 0).zero_last_layer()
    clean_pairs = [data.PatchPair(p.clean, p.clean, None) for p in pairs]
    r = training.evaluate_epoch(zero, clean_pairs)
    assert math.isinf(r.mean_psnr) and r.n_infinite == 3 and r.mean_ssim == 1.0
    r = training.evaluate_epoch(zero, pairs)
    assert r.count == 3 and 15 < r.mean_psnr < 25


def test_evaluate_epoch_triplets():
    video = synthetic.make_video(3, 50, 50, seed=0)
    spatial = build_network(networks.spatial_spec(depth=3, first_width=4, mid_width=4), 0).zero_last_layer()
    quiet = NoiseMix(p_awgn=1.0, sigma_range=(0.0, 0.0))
    _, pairs = data.build_temporal_dataset([video], spatial, quiet, patch_count=2, seed=0)
    temporal = build_network(networks.temporal_spec(3, depth=3, first_width=4, mid_width=4), 0).zero_last_layer()
    r = training.evaluate_epoch(temporal, pairs)
    assert r.n_infinite == 2
