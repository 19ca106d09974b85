"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance
criteria" section at the end of the output.
"""

import os
import time

import numpy as np
import pytest

from hummit.cli import main as cli_main
from hummit.contour import extract_melody
from hummit.corpus import SampledAudio, scan_corpus
from hummit.dataset import DatasetConfig, frame_query
from hummit.eval import WITH_TVR, WITHOUT_TVR, AblationConfig, run_ablation
from hummit.fcn import ArchSpec, TrainConfig, forward, gradients, init_params, train_arrays
from hummit.pipeline import PipelineConfig
from hummit.pitch import PitchVector, estimate_f0, semitone_to_hz
from hummit.synth import synthesize_corpus
from hummit.tvr import denoise_tv, tv_norm, tv_objective

from acceptance_log import record
from oracles import central_difference_grad, tv_dual_projected_gradient


def test_criterion_01_tv_optimality():
    rng = np.random.default_rng(2024)
    sigs = [rng.uniform(-10, 10, int(rng.integers(1, 17))) for _ in range(1000)]
    lams = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), 1000))
    ref = tv_dual_projected_gradient(sigs, lams)
    t0 = time.perf_counter()
    outs = [denoise_tv(f, lam) for f, lam in zip(sigs, lams)]
    elapsed = time.perf_counter() - t0
    gap = max(tv_objective(f, u, l) - tv_objective(f, r, l)
              for f, u, r, l in zip(sigs, outs, ref, lams))
    diff = max(float(np.max(np.abs(u - r))) for u, r in zip(outs, ref))
    ok = gap <= 1e-9 and diff <= 1e-6 and elapsed < 10
    record(1, ok, f"objective excess {gap:.2e}, max abs diff {diff:.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_tv_analytic():
    a = denoise_tv([0.0, 2.0], 1.0)
    b = denoise_tv([0.0, 4.0], 1.0)
    closed = max(np.max(np.abs(a - [1, 1])), np.max(np.abs(b - [1, 3])))
    rng = np.random.default_rng(7)
    worst_mean, maxp, tvinc = 0.0, True, True
    for _ in range(2000):
        f = rng.uniform(-10, 10, int(rng.integers(1, 64)))
        lam = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
        u = denoise_tv(f, lam)
        worst_mean = max(worst_mean, abs(u.mean() - f.mean()))
        maxp &= bool(u.min() >= f.min() - 1e-12 and u.max() <= f.max() + 1e-12)
        tvinc &= tv_norm(u) <= tv_norm(f) + 1e-12
    ok = closed <= 1e-12 and worst_mean <= 1e-9 and maxp and tvinc
    record(2, ok, f"closed-form error {closed:.1e}, mean drift {worst_mean:.1e}, "
                  f"max principle {maxp}, TV non-increase {tvinc}")
    assert ok


def test_criterion_03_gradient_check():
    worst = {}
    for arch in (ArchSpec("fcn", 3, 9, blocks=((4, 5), (3, 3))), ArchSpec("mlp", 3, 6, hidden=(5, 4))):
        rng = np.random.default_rng(1)
        model = init_params(arch, 2, np.float64)
        for k in model.params:
            model.params[k] += rng.normal(0, 0.1, model.params[k].shape)
        x = rng.normal(0, 1, (4, arch.input_len))
        y = np.array([2, 0, 1, 1])
        grads, _ = gradients(model, x, y)
        for name, p in model.params.items():
            fd = central_difference_grad(lambda: gradients(model, x, y)[1], p, 1e-5)
            rel = np.abs(grads[name] - fd) / np.maximum(np.maximum(np.abs(grads[name]), np.abs(fd)), 1e-6)
            worst[f"{arch.kind}:{name}"] = float(rel.max())
    name = max(worst, key=worst.get)
    ok = worst[name] <= 1e-4
    record(3, ok, f"{len(worst)} parameter tensors, worst relative error {worst[name]:.1e} ({name})")
    assert ok


def test_criterion_04_simplex_and_inventory():
    model = init_params(ArchSpec("fcn", 10, 500), 0)
    x = np.random.default_rng(0).normal(0, 4, (16, 500))
    p = forward(model, x).astype(np.float64)
    simplex = float(np.max(np.abs(p.sum(axis=1) - 1)))
    nonneg = bool(np.all(p >= 0))
    same = init_params(ArchSpec("fcn", 10, 300), 0).inventory() == model.inventory()
    ok = simplex <= 1e-6 and nonneg and same
    record(4, ok, f"row-sum error {simplex:.1e}, non-negative {nonneg}, inventory 300 == 500: {same}")
    assert ok


def test_criterion_05_pitch_tracker():
    sr = 8000
    t = np.arange(2 * sr) / sr
    fractions = {}
    for f0 in (100.0, 220.0, 440.0):
        pv = estimate_f0(SampledAudio(sr, 0.5 * np.sin(2 * np.pi * f0 * t)))
        est = semitone_to_hz(pv.values[pv.voiced])
        fractions[f0] = float(np.mean(np.abs(est / f0 - 1) <= 0.01)) if est.size else 0.0
    ok = all(v >= 0.95 for v in fractions.values())
    record(5, ok, ", ".join(f"{int(k)} Hz {v:.1%}" for k, v in fractions.items()))
    assert ok


def test_criterion_06_contour_recovery():
    rng = np.random.default_rng(5)
    fps = 100.0
    hits = 0
    for _ in range(500):
        nseg = int(rng.integers(3, 10))
        lens = rng.integers(int(0.3 * fps), 81, nseg)
        steps = rng.choice([-1, 1], nseg - 1) * rng.uniform(2, 7, nseg - 1)
        levels = 60 + np.concatenate([[0.0], np.cumsum(steps)])
        clean = np.repeat(levels, lens)
        truth = np.cumsum(lens)[:-1] - 1
        sigma = rng.uniform(0.0, 0.3)
        ext = extract_melody(PitchVector(fps, clean + rng.normal(0, sigma, clean.size)))
        got = np.array(ext.transitions)
        hits += got.size == truth.size and bool(np.all(np.abs(got - truth) <= 2))
    ok = hits / 500 >= 0.95
    record(6, ok, f"{hits}/500 melodies recovered ({hits / 5:.1f}%)")
    assert ok


# Desk-scale settings: see README "Desk-scale ablation".
DESK_FRAME_RATE = 25.0
DESK_TRAIN = TrainConfig(batch_size=4, seed=0)


def test_criterion_07_desk_ablation(tmp_path):
    t0 = time.perf_counter()
    root = synthesize_corpus(tmp_path / "corpus", n_songs=10, queries_per_song=15, seed=0)
    catalog = scan_corpus(root, "mir-qbsh")
    cfg = AblationConfig(pipeline=PipelineConfig(),
                         dataset=DatasetConfig(frame_rate=DESK_FRAME_RATE, seed=0),
                         train=DESK_TRAIN)
    report = run_ablation(catalog, cfg)
    elapsed = time.perf_counter() - t0
    with_acc = report.row(WITH_TVR).query_accuracy
    without_acc = report.row(WITHOUT_TVR).query_accuracy
    text = report.to_text()
    refs = all(v in text for v in ("0.93", "0.67", "0.78"))
    print(text)
    ok = (len(catalog.songs) == 10 and len(catalog.queries) >= 150
          and with_acc >= without_acc + 0.05 and with_acc >= 0.70
          and elapsed <= 1800 and refs)
    record(7, ok, f"with TVR {with_acc:.3f}, without {without_acc:.3f} "
                  f"(gain {100 * (with_acc - without_acc):+.1f} pp), "
                  f"{len(catalog.queries)} queries, {elapsed / 60:.1f} min, reference rows {refs}")
    assert ok


def test_criterion_08_overfit_toy():
    x = np.array([np.sin(np.linspace(0, 3, 20)), np.cos(np.linspace(0, 3, 20)),
                  np.linspace(-1, 1, 20), -np.linspace(-1, 1, 20)])
    y = np.array([0, 1, 0, 1])
    cfg = TrainConfig(max_epochs=500, batch_size=4, constant_epochs=500)
    _, history = train_arrays(x, y, x[:0], y[:0], None, ArchSpec("fcn", 2, 20), cfg)
    first = next((r["epoch"] for r in history if r["loss"] < 0.01), None)
    ok = first is not None
    record(8, ok, f"loss < 0.01 first at epoch {first}" if ok
           else f"final loss {history[-1]['loss']:.4f} after 500 epochs")
    assert ok


def _seeded_runs(work, corpus, threads):
    t = [] if threads is None else ["--threads", str(threads)]
    work.mkdir()
    pv = work / "q.pv"
    pv.write_text("".join(f"{v}\n" for v in 60 + np.sin(np.arange(80)) * 3))
    wav = next(corpus.rglob("*.wav"))
    argvs = [
        ["dataset", "synth", "--out", work / "syn", "--songs", "2", "--queries-per-song", "2"],
        ["extract", wav, "--dump-intermediate", "--out", work / "e.json"],
        ["denoise", pv, "--out", work / "d.pv"],
        ["dataset", "build", "--root", corpus, "--augment-tvr", "--frame-rate", "20",
         "--out", work / "ds.bin"],
        ["train", "--dataset", work / "ds.bin", "--max-epochs", "2", "--batch-size", "8",
         "--out", work / "m.bin", "--history", work / "h.json"],
        ["query", wav, "--model", work / "m.bin", "--out", work / "q.txt"],
        ["evaluate", "--root", corpus, "--frame-rate", "20", "--max-epochs", "2",
         "--batch-size", "8", "--json", "--out", work / "r.json"],
    ]
    for argv in argvs:
        code = cli_main([str(a) for a in argv] + ["--seed", "3"] + t)
        assert code == 0, argv
    return {str(p.relative_to(work)): p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}


def test_criterion_09_determinism(tmp_path):
    corpus = synthesize_corpus(tmp_path / "corpus", n_songs=3, queries_per_song=4, seed=1)
    outcomes = {}
    for label, threads in (("threads=1", 1), ("default", None)):
        a = _seeded_runs(tmp_path / f"{label}-a", corpus, threads)
        b = _seeded_runs(tmp_path / f"{label}-b", corpus, threads)
        outcomes[label] = (a == b, len(a))
    ok = all(same for same, _ in outcomes.values())
    record(9, ok, ", ".join(f"{k}: {n} artifacts {'identical' if s else 'DIFFER'}"
                            for k, (s, n) in outcomes.items()) + f" (cpu count {os.cpu_count()})")
    assert ok


def test_criterion_10_windowing():
    frames = frame_query(np.zeros(800), DatasetConfig(window_s=5, hop_s=2, frame_rate=100))
    ok = len(frames) == 2 and all(f.size == 500 for f in frames)
    record(10, ok, f"{len(frames)} frames of {frames[0].size} samples")
    assert ok
