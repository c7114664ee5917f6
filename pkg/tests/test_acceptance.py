"""Exit criteria. Each test records one PASS/FAIL line shown in the terminal summary."""

import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from lfpstage.dataset_io import (
    Recording,
    RecordingHeader,
    SplitKind,
    SplitSpec,
    load_recording,
    save_recording,
    split_chronological,
    split_random,
)
from lfpstage.evaluation import ConfusionMatrix, metrics
from lfpstage.features import FeatureTensor, extract_many, load_feature_file, save_feature_file
from lfpstage.loss import FocalLossConfig, focal_loss
from lfpstage.model import ModelDims, ShapeError, forward, init_params, load_model, predict, save_model
from lfpstage.pipeline import preprocess
from lfpstage.synth import SynthConfig, generate
from lfpstage.training import TrainConfig, fit, grad_check, split_for


def record(number, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}")
    assert passed, detail


def test_01_gradient_correctness():
    dims = ModelDims(n_layers=4, feat_dim=8, attn_dim=4, widths=(8, 8, 8))
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        params = init_params(dims, seed)
        params.tensors["theta"] = rng.standard_normal(4)
        sample = FeatureTensor(rng.standard_normal((8, 4, 16, 8))), int(rng.integers(4))
        cfg = FocalLossConfig(2.0, tuple(rng.uniform(0.3, 2.0, 4)))
        worst = max(worst, grad_check(params, sample, cfg).max_rel_error)
    elapsed = time.perf_counter() - t0
    record(1, worst <= 1e-4 and elapsed < 60, f"grad_check max rel err {worst:.2e} (<= 1e-4), {elapsed:.1f} s (< 60 s)")


def test_02_focal_loss_reductions():
    rng = np.random.default_rng(2)
    cfg = FocalLossConfig(0.0, (1.0, 1.0, 1.0, 1.0))
    worst = 0.0
    for _ in range(1000):
        p = rng.dirichlet(np.ones(4))
        label = int(rng.integers(4))
        worst = max(worst, abs(focal_loss(p, label, cfg) - (-math.log(p[label]))))
    perfect = all(focal_loss(np.eye(4)[k], k, FocalLossConfig(g)) == 0.0 for k in range(4) for g in (0.0, 0.5, 2.0))
    record(2, worst <= 1e-12 and perfect, f"|FL(gamma=0) - CE| max {worst:.1e} (<= 1e-12); FL(p_t=1) == 0: {perfect}")


def test_03_attention_invariants():
    dims = ModelDims(n_layers=4, feat_dim=8, attn_dim=4, widths=(8, 8, 8))
    rng = np.random.default_rng(3)
    sums_ok = uniform_ok = perm_ok = True
    for trial in range(100):
        params = init_params(dims, trial)
        ft = FeatureTensor(rng.standard_normal((8, 4, 20, 8)))
        res = forward(params, ft)
        sums_ok &= abs(res.alpha.sum() - 1) <= 1e-6
        same = FeatureTensor(np.repeat(rng.standard_normal((1, 4, 20, 8)), 8, axis=0))
        uniform_ok &= bool(np.allclose(forward(params, same).alpha, 1 / 8, rtol=0, atol=1e-12))
        perm = rng.permutation(8)
        permuted = forward(params, ft.permute_channels(perm))
        perm_ok &= permuted.probs.tobytes() == res.probs.tobytes() and np.array_equal(permuted.alpha, res.alpha[perm])
    record(3, sums_ok and uniform_ok and perm_ok,
           f"100 trials: sum(alpha)=1 {sums_ok}, identical->uniform {uniform_ok}, permutation bit-exact {perm_ok}")


def test_04_shape_contracts():
    dims = ModelDims(n_layers=1, feat_dim=3, attn_dim=2, widths=(2, 2, 2))
    params = init_params(dims, 0)
    rng = np.random.default_rng(4)
    lengths_ok = all(
        forward(params, FeatureTensor(rng.standard_normal((2, 1, T, 3)))).frame_weights.shape == (T - 12,)
        for T in range(13, 201)
    )
    rejected = 0
    for T in range(1, 13):
        try:
            forward(params, FeatureTensor(rng.standard_normal((2, 1, T, 3))))
        except ShapeError:
            rejected += 1
    record(4, lengths_ok and rejected == 12, f"T in [13,200] -> T-12: {lengths_ok}; T<13 rejected {rejected}/12")


def test_05_split_protocol():
    rng = np.random.default_rng(5)
    chrono_ok = random_ok = True
    for trial in range(50):
        segments = []
        for subject in ("s1", "s2"):
            cfg = SynthConfig(
                n_epochs_per_stage=int(rng.integers(2, 7)), n_channels=1, informative_channels=(0,),
                seed=int(rng.integers(2**32)), subject_id=subject, max_bout=3,
            )
            segments += preprocess(*generate(cfg))
        frac = float(rng.uniform(0.5, 0.95))
        train, test = split_chronological(segments, SplitSpec(SplitKind.CHRONOLOGICAL, frac))
        for subject in ("s1", "s2"):
            for label in range(4):
                tr = [s.start_sample for s in train if (s.subject_id, s.label) == (subject, label)]
                te = [s.start_sample for s in test if (s.subject_id, s.label) == (subject, label)]
                if tr and te:
                    chrono_ok &= max(tr) < min(te)
        seed = int(rng.integers(2**63))
        a_tr, a_te = split_random(segments, SplitSpec(SplitKind.RANDOM, frac, seed))
        b_tr, _ = split_random(segments, SplitSpec(SplitKind.RANDOM, frac, seed))
        random_ok &= [id(s) for s in a_tr] == [id(s) for s in b_tr]
        for label in range(4):
            n = sum(s.label == label for s in segments)
            random_ok &= sum(s.label == label for s in a_tr) == round(frac * n)
        random_ok &= len(a_tr) + len(a_te) == len(segments)
    record(5, chrono_ok and random_ok,
           f"50 datasets: chronological max(train) < min(test) {chrono_ok}; random stratified+reproducible {random_ok}")


def test_06_end_to_end_classification():
    t0 = time.perf_counter()
    default_night = preprocess(*generate(SynthConfig()))
    cfg = TrainConfig(epochs=30)
    _, history = fit(default_night, cfg)
    elapsed = time.perf_counter() - t0
    acc = history.test_acc[history.best_epoch]
    record(6, len(default_night) == 4800 and acc >= 0.90 and elapsed < 600,
           f"{len(default_night)} segments, test accuracy {acc:.4f} (>= 0.90), {elapsed:.0f} s (< 600 s)")


def test_07_attention_localization():
    segments = preprocess(*generate(SynthConfig(informative_channels=(3,))))
    cfg = TrainConfig(epochs=10)
    params, _ = fit(segments, cfg)
    _, test = split_for(segments, cfg)
    _, alphas = predict(params, extract_many(cfg.backend, test))
    mean_alpha = alphas.mean(axis=0)
    record(7, mean_alpha[3] > 0.5, f"mean alpha_3 over test = {mean_alpha[3]:.3f} (> 0.5); all = {np.round(mean_alpha, 3).tolist()}")


def test_08_prediction_task_not_easier():
    segments = preprocess(*generate(SynthConfig(drift=3.0)))
    accs = {}
    for task in ("Classification", "Prediction"):
        _, history = fit(segments, TrainConfig(epochs=10, task=task))
        accs[task] = history.test_acc[history.best_epoch]
    passed = accs["Prediction"] <= accs["Classification"] + 0.02
    record(8, passed, f"prediction {accs['Prediction']:.4f} <= classification {accs['Classification']:.4f} + 0.02")


def test_09_metric_fixture():
    # rows of 1000 segments per true stage, diagonals from the reported per-stage rates
    counts = np.array([
        [891, 40, 39, 30],
        [120, 758, 80, 42],
        [60, 90, 790, 60],
        [50, 40, 22, 888],
    ])
    recalls = metrics(ConfusionMatrix(counts)).per_class_recall.tolist()
    expected = [0.891, 0.758, 0.790, 0.888]
    record(9, recalls == expected, f"recalls {recalls} == {expected}")


def test_10_file_round_trips(tmp_path):
    rng = np.random.default_rng(10)
    rec = Recording(RecordingHeader("s", 500, 8, 15000), rng.standard_normal((8, 15000)).astype(np.float32))
    save_recording(rec, tmp_path / "r.json")
    back = load_recording(tmp_path / "r.json")
    rec_ok = back.header == rec.header and back.samples.tobytes() == rec.samples.tobytes()

    feats = [FeatureTensor(rng.standard_normal((8, 25, 7, 1024)).astype(np.float32), 0.02, 0.025) for _ in range(2)]
    save_feature_file(tmp_path / "f.featjson", feats)
    loaded = load_feature_file(tmp_path / "f.featjson")
    feat_ok = len(loaded) == 2 and all(a.data.tobytes() == b.data.tobytes() for a, b in zip(feats, loaded))
    feat_ok &= loaded[0].shape == (8, 25, 7, 1024)

    params = init_params(ModelDims(), 10)
    params = type(params)(params.dims, {k: v.astype(np.float32).astype(np.float64) for k, v in params.tensors.items()})
    save_model(params, tmp_path / "m.modeljson")
    model_back, _ = load_model(tmp_path / "m.modeljson")
    model_ok = all(model_back.tensors[k].tobytes() == params.tensors[k].tobytes() for k in params.tensors)
    record(10, rec_ok and feat_ok and model_ok,
           f"bit-exact round trips: recording {rec_ok}, features L=25 D=1024 {feat_ok}, model {model_ok}")
