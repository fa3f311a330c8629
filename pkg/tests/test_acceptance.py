"""
End-to-end acceptance checks. Each test prints one PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``.
"""

import csv
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from staircase_attack.attacks import AttackConfig, Composers, run_attack
from staircase_attack.config import load_config
from staircase_attack.evaluation import gaussian_alignment
from staircase_attack.experiment import run_experiment, sweep_k
from staircase_attack.models import convnet, finite_difference_gradient, mlp
from staircase_attack.staircase import StaircaseConfig, staircase_sign, staircase_weights
from staircase_attack.tensor import sign

ROOT = Path(__file__).resolve().parent.parent
TRANSFER_CFG = ROOT / "configs" / "transfer.cfg"


def report(capsys, number, title, ok, detail, elapsed, limit=None):
    timing = f"{elapsed:.1f}s" + (f" (limit {limit}s)" if limit else "")
    with capsys.disabled():
        print(f"\ncriterion {number} [{title}]: {'PASS' if ok else 'FAIL'} | {detail} | {timing}")


def ifgsm_reference(model, x, label, eps, T, targeted):
    alpha = eps / T
    adv = x.copy()
    for _ in range(T):
        step = alpha * np.sign(model.input_gradient(adv, label))
        adv = adv - step if targeted else adv + step
        adv = np.clip(np.clip(adv, x - eps, x + eps), -1.0, 1.0)
    return adv


def test_criterion_1_staircase_correctness(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    Ks = [1, 2, 4, 8, 64, 256]
    failures = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 4097))
        K = Ks[int(rng.integers(len(Ks)))]
        G = rng.standard_normal(n)
        w = staircase_weights(G, K).weights
        levels = StaircaseConfig(K).levels()
        mag = np.abs(G)
        order = np.argsort(mag)
        slot = np.minimum(np.searchsorted(levels, w), K - 1)
        ok = (
            np.array_equal(levels[slot], w)
            and w.min() >= 1 / K
            and w.max() <= 2 - 1 / K
            and np.all(np.diff(w[order]) >= 0)
        )
        c = float(rng.uniform(0.01, 100.0))
        ok = ok and np.array_equal(staircase_weights(c * G, K).weights, w)
        perm = rng.permutation(n)
        ok = ok and np.array_equal(staircase_weights(G[perm], K).weights, w[perm])
        failures += not ok
    elapsed = time.perf_counter() - t0
    passed = failures == 0 and elapsed < 10
    report(capsys, 1, "staircase correctness", passed, f"{failures} failures / 10000", elapsed, 10)
    assert failures == 0
    assert elapsed < 10


def test_criterion_2_mean_one(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    Ks = [1, 2, 4, 8, 16, 64, 256]
    failures = 0
    for _ in range(1000):
        K = Ks[int(rng.integers(len(Ks)))]
        n = K * int(rng.integers(1, 17))
        G = rng.standard_normal(n)
        assert np.unique(np.abs(G)).size == n
        failures += abs(staircase_weights(G, K).weights.mean() - 1.0) > 1e-12
    elapsed = time.perf_counter() - t0
    report(capsys, 2, "mean-one", failures == 0 and elapsed < 5, f"{failures} failures / 1000", elapsed, 5)
    assert failures == 0
    assert elapsed < 5


def test_criterion_3_k1_degeneracy(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    mismatches = 0
    for _ in range(1000):
        shape = tuple(int(s) for s in rng.integers(1, 12, size=int(rng.integers(1, 4))))
        t = rng.standard_normal(shape)
        t[rng.random(shape) < 0.05] = 0.0
        mismatches += not np.array_equal(staircase_sign(t, 1), sign(t))
    model = mlp((1, 16, 16), 10, seed=17)
    runs = 0
    for i in range(20):
        x = rng.uniform(-1, 1, (1, 16, 16))
        y = int(rng.integers(10))
        targeted = bool(i % 2)
        label = (y + 1) % 10 if targeted else y
        cfg = AttackConfig(16.0, 20, 1, targeted=targeted)
        got = run_attack(cfg, model, x, y, label if targeted else None).adversarial
        want = ifgsm_reference(model, x, label, cfg.epsilon, 20, targeted)
        mismatches += not np.array_equal(got, want)
        runs += 1
    elapsed = time.perf_counter() - t0
    passed = mismatches == 0 and elapsed < 30
    report(capsys, 3, "K=1 degeneracy", passed, f"{mismatches} mismatches (1000 tensors, {runs} runs of T=20)", elapsed, 30)
    assert mismatches == 0
    assert elapsed < 30


def test_criterion_4_gradient_correctness(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for i in range(100):
        build = mlp if i % 2 == 0 else convnet
        model = build((1, 8, 8), 10, seed=int(rng.integers(2**31)))
        x = rng.uniform(-1, 1, (1, 8, 8))
        label = int(rng.integers(10))
        g = model.input_gradient(x, label)
        fd = finite_difference_gradient(model, x, label, h=1e-5)
        err = np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), np.max(np.abs(fd)))
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    passed = worst < 1e-4 and elapsed < 60
    report(capsys, 4, "gradient correctness", passed, f"max relative error {worst:.2e} over 100 triples", elapsed, 60)
    assert worst < 1e-4
    assert elapsed < 60


def test_criterion_5_linf_safety(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    models = [mlp((1, 8, 8), 10, seed=5), convnet((1, 8, 8), 10, seed=6)]
    subsets = [
        Composers(mu, p, t, m)
        for mu in (None, 1.0)
        for p in (None, 0.5)
        for t in (None, 3)
        for m in (None, 3)
    ]
    violations = checked = 0
    for comp in subsets:
        for K in (1, 64):
            for targeted in (False, True):
                cfg = AttackConfig(16.0, 10, K, targeted=targeted, composers=comp, seed=checked)
                for model in models:
                    for _ in range(2):
                        x = rng.uniform(-1, 1, (1, 8, 8))
                        y = int(rng.integers(10))
                        trace = run_attack(cfg, model, x, y, (y + 3) % 10 if targeted else None)
                        for r in trace.records:
                            bad = np.max(np.abs(r.iterate - x)) > cfg.epsilon + 1e-12
                            bad = bad or r.iterate.min() < -1.0 or r.iterate.max() > 1.0
                            violations += bool(bad)
                            checked += 1
    elapsed = time.perf_counter() - t0
    report(capsys, 5, "L-inf safety", violations == 0, f"{violations} violations / {checked} iterates", elapsed)
    assert violations == 0


def quadrature_s2m_cosine(K):
    """Large-dimension limit of cos(g, S2M(g)) for i.i.d. normal g, by quadrature."""
    num = 0.0
    for k in range(K):
        a, b = stats.halfnorm.ppf(k / K), stats.halfnorm.ppf((k + 1) / K)
        num += (2 * k + 1) / K * integrate.quad(lambda t: t * stats.halfnorm.pdf(t), a, b)[0]
    levels = (2 * np.arange(K) + 1) / K
    return num / np.sqrt(np.mean(levels**2))


@pytest.mark.slow
def test_criterion_6_alignment_trend(capsys):
    oracle_s2m = quadrature_s2m_cosine(64)
    oracle_gap = oracle_s2m - np.sqrt(2 / np.pi)
    t0 = time.perf_counter()
    sm, s2m = gaussian_alignment(100_000, 10_000, K=64, seed=606)
    elapsed = time.perf_counter() - t0
    gap = s2m.mean - sm.mean
    ok_sm = abs(sm.mean - 0.798) <= 0.005
    ok_gap = gap >= 0.05 and abs(s2m.mean - oracle_s2m) <= 0.005
    passed = ok_sm and ok_gap and elapsed < 60
    detail = (f"SM {sm.mean:.4f}, S2M {s2m.mean:.4f}, gap {gap:.4f} "
              f"(oracle S2M {oracle_s2m:.4f}, gap {oracle_gap:.4f})")
    report(capsys, 6, "alignment trend", passed, detail, elapsed, 60)
    assert ok_sm
    assert ok_gap
    assert elapsed < 60


def _holdout(path):
    with open(path, newline="") as fh:
        return {row["attack"]: row for row in csv.DictReader(fh)}


@pytest.fixture(scope="module")
def transfer_runs(tmp_path_factory):
    cfg = load_config(TRANSFER_CFG)
    out = tmp_path_factory.mktemp("transfer")
    t0 = time.perf_counter()
    run_experiment(cfg, str(out))
    t_run = time.perf_counter() - t0
    sweep_k(cfg, str(out))
    return cfg, out, t_run, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_transfer_trend(capsys, transfer_runs):
    cfg, out, t_run, _ = transfer_runs
    rows = _holdout(out / "results.csv")
    sm, s2m = rows["I-FGSM"], rows["I-FGS2M"]
    assert sm["K"] == "1" and s2m["K"] == "64" and sm["targeted"] == s2m["targeted"] == "false"
    assert cfg.samples >= 500
    hold = float(s2m["holdout_rate"]) >= float(sm["holdout_rate"])
    white = float(s2m["ensemble_rate"]) >= float(sm["ensemble_rate"])
    passed = hold and white and t_run < 300
    detail = (f"hold-out {sm['holdout_rate']} -> {s2m['holdout_rate']}, "
              f"ensemble {sm['ensemble_rate']} -> {s2m['ensemble_rate']}, {cfg.samples} samples")
    report(capsys, 7, "transfer trend", passed, detail, t_run, 300)
    assert hold and white
    assert t_run < 300


@pytest.mark.slow
def test_criterion_8_k_sweep_shape(capsys, transfer_runs):
    cfg, out, _, total = transfer_runs
    rows = _holdout(out / "sweep_k.csv")
    base = cfg.sweep_attack
    h = [float(rows[f"{base}@K={k}"]["holdout_rate"]) for k in (1, 2, 64)]
    inversions = int(h[1] < h[0]) + int(h[2] < h[1])
    # one adjacent inversion is noise; the endpoints must still keep the trend
    passed = inversions <= 1 and h[2] >= h[0]
    detail = f"hold-out K=1 {h[0]:.3f}, K=2 {h[1]:.3f}, K=64 {h[2]:.3f}, {inversions} inversions"
    report(capsys, 8, "K-sweep shape", passed, detail, total)
    assert passed


@pytest.mark.slow
def test_criterion_9_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    outs = []
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [str(ROOT / "src"), env.get("PYTHONPATH")]))
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "staircase_attack", "run", "--config", str(TRANSFER_CFG), "--out", str(out)],
            capture_output=True, text=True, env=env,
        )
        assert proc.returncode == 0, proc.stderr
        outs.append((out / "results.csv").read_bytes())
    elapsed = time.perf_counter() - t0
    same = outs[0] == outs[1]
    report(capsys, 9, "determinism", same, f"results.csv byte-identical: {same}", elapsed)
    assert same
