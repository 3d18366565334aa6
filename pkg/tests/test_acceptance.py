"""Acceptance gate: one test per criterion, each logging a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines
as they happen; a summary block is printed at the end of every pytest run.
"""
import json
import os
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import LINES, criterion
from deepslda.baselines import PrototypeBuffer, softmax_grad, softmax_loss
from deepslda.config import config_from_dict, load_config
from deepslda.dataio import FeatureBank, bank_from_bytes, bank_to_bytes, synth_bank
from deepslda.evaluation import (
    DEFAULT_MAX_MEM_BYTES,
    DEFAULT_MAX_TIME_SECONDS,
    efficiency_scores,
    omega_all,
    run_streaming_eval,
)
from deepslda.experiment import run_experiment, strip_timing
from deepslda.numerics import SHRINKAGE_GRID, ShrinkageConfig, oas_covariance, regularize, shrinkage_precision
from deepslda.orderings import Samples, make_plan
from deepslda.slda import CovInit, Mode, SldaModel, dumps_model, loads_model
from oracles import (
    argmax_low_index,
    central_difference_grad,
    covariance_step,
    gaussian_discriminant,
    oas_literal,
    random_psd,
)

ROOT = Path(__file__).resolve().parents[1]
BENCHMARK_CONFIG = ROOT / "configs" / "synthetic_benchmark.json"


def test_c01_mean_equivalence():
    with criterion(1, "streaming class means equal batch means (100 streams)", max_seconds=10):
        rng = np.random.default_rng(101)
        worst = 0.0
        for s in range(100):
            d, k, n = int(rng.integers(1, 65)), int(rng.integers(1, 11)), int(rng.integers(1, 2001))
            x = rng.standard_normal((n, d)) * rng.uniform(0.1, 100) + rng.standard_normal(d) * 50
            y = rng.integers(0, k, n)
            m = SldaModel(d, k, CovInit.zero(), Mode.PLASTIC if s % 2 else Mode.FIXED)
            for zi, yi in zip(x, y):
                m.learn(zi, yi)
            assert np.array_equal(m.counts, np.bincount(y, minlength=k))
            for c in np.flatnonzero(m.counts):
                ref = x[y == c].mean(axis=0)
                worst = max(worst, np.linalg.norm(m.means[c] - ref) / np.linalg.norm(ref))
        assert worst < 1e-9, worst


def test_c02_decision_equivalence():
    with criterion(2, "readout argmax equals Gaussian-discriminant oracle (200 instances)", max_seconds=10):
        rng = np.random.default_rng(202)
        for _ in range(200):
            d, k = int(rng.integers(1, 33)), int(rng.integers(1, 11))
            eps = float(rng.choice(SHRINKAGE_GRID))
            sigma = random_psd(rng, d, rank=int(rng.integers(1, d + 1)))
            m = SldaModel(d, k, CovInit.zero(), Mode.FIXED, ShrinkageConfig(eps))
            m.sigma = sigma
            means = rng.standard_normal((k, d)) * 2
            seen = rng.random(k) < 0.8
            seen[rng.integers(0, k)] = True
            for c in np.flatnonzero(seen):
                m.learn(means[c], c)
            z = rng.standard_normal(d) * 2
            oracle = gaussian_discriminant(m.means, seen, sigma, eps, z)
            best = max(oracle)
            ties = [c for c, v in enumerate(oracle) if v >= best - 1e-9 * max(1.0, abs(best))]
            top = m.predict(z)[0][0]
            if len(ties) == 1:
                assert top == argmax_low_index(oracle)
            else:
                assert top in ties
        # exact tie resolves to the lowest index
        m = SldaModel(2, 2, CovInit.zero(), Mode.FIXED)
        m.sigma = np.eye(2)
        m.learn([0.0, 0.0], 0)
        m.learn([2.0, 0.0], 1)
        assert m.predict(np.array([1.0, 0.0]))[0][0] == 0


def test_c03_covariance_update():
    with criterion(3, "plastic covariance step matches independent transcription (1000 steps)"):
        rng = np.random.default_rng(303)
        worst = 0.0
        for i in range(1000):
            d = int(rng.integers(1, 9))
            t = 0 if i % 10 == 0 else int(rng.integers(1, 10_000))
            m = SldaModel(d, 3, CovInit.zero(), Mode.PLASTIC)
            m.sigma = random_psd(rng, d) * rng.uniform(0.01, 100)
            m.t = t
            y = int(rng.integers(0, 3))
            m.means[y] = rng.standard_normal(d) * 10
            m.counts[y] = int(rng.integers(0, 50))
            z = rng.standard_normal(d) * 10
            expected, t_next = covariance_step(m.sigma.copy(), t, z, m.means[y].copy())
            m.learn(z, y)
            assert m.t == t_next
            worst = max(worst, float(np.max(np.abs(m.sigma - expected))))
        assert worst <= 1e-12, worst


def test_c04_shrinkage_and_oas():
    with criterion(4, "shrinkage precision SPD/residual up to d=128; OAS equals literal formula"):
        rng = np.random.default_rng(404)
        for d in (1, 2, 5, 16, 64, 128):
            for eps in (1e-4, *SHRINKAGE_GRID):
                sigma = random_psd(rng, d, rank=max(1, d // 3))
                cfg = ShrinkageConfig(eps)
                lam = shrinkage_precision(sigma, cfg)
                assert np.array_equal(lam, lam.T)
                np.linalg.cholesky(lam)
                a = regularize(sigma, cfg)
                assert np.linalg.norm(a @ lam - np.eye(d)) / np.linalg.norm(np.eye(d)) < 1e-8
        for _ in range(20):
            n, d = int(rng.integers(2, 40)), int(rng.integers(1, 10))
            x = rng.standard_normal((n, d)) @ rng.standard_normal((d, d)) + rng.standard_normal(d)
            assert np.max(np.abs(oas_covariance(x) - oas_literal(x))) <= 1e-12


def test_c05_eval_schedule_invariance():
    with criterion(5, "accuracies identical for eval-every-600 vs eval-every-1200", max_seconds=30):
        train = synth_bank(5, 10, 16, 600, 5, 4.0)
        test = synth_bank(5, 10, 16, 200, 5, 4.0, split="test")
        for kind in ("iid", "class_instance"):
            fine = make_plan(train, kind, 0, Samples(0), Samples(600))
            coarse = make_plan(train, kind, 0, Samples(0), Samples(1200))
            assert np.array_equal(fine.order, coarse.order)
            for mode in Mode:
                a, _ = run_streaming_eval(train, test, fine, SldaModel(16, 10, CovInit.zero(), mode))
                b, _ = run_streaming_eval(train, test, coarse, SldaModel(16, 10, CovInit.zero(), mode))
                shared = [p for p in b.positions if p in a.positions]
                assert len(shared) == 5
                for p in shared:
                    assert abs(a.at(p) - b.at(p)) <= 1e-12


def test_c06_gradient_check():
    with criterion(6, "softmax gradient matches central differences (50 instances)"):
        rng = np.random.default_rng(606)
        worst = 0.0
        for _ in range(50):
            k, d, n = int(rng.integers(2, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 8))
            wd = float(rng.choice([0.0, 1e-4, 0.05]))
            w, b = rng.standard_normal((k, d)), rng.standard_normal(k)
            z, y = rng.standard_normal((n, d)), rng.integers(0, k, n)
            gw, gb = softmax_grad(w, b, z, y, wd)
            fw, fb = central_difference_grad(w, b, z, y, wd, h=1e-5)
            analytic = np.concatenate([gw.ravel(), gb])
            numeric = np.concatenate([fw.ravel(), fb])
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
            worst = max(worst, float(rel.max()))
            assert np.isfinite(softmax_loss(w, b, z, y, wd))
        assert worst < 1e-4, worst


def test_c07_buffer_invariants():
    with criterion(7, "prototype buffer capacity, count conservation, centroid (10,000 inserts)"):
        rng = np.random.default_rng(707)
        k, cap, d = 5, 20, 8
        buf = PrototypeBuffer(k, cap)
        sums = np.zeros((k, d))
        inserted = np.zeros(k, dtype=int)
        for _ in range(10_000):
            y = int(rng.integers(0, k))
            z = rng.standard_normal(d) * 3 + y
            buf.insert(z, y)
            sums[y] += z
            inserted[y] += 1
            assert len(buf.vectors[y]) <= cap
        for c in range(k):
            assert sum(buf.counts[c]) == inserted[c]
            assert np.max(np.abs(buf.centroid(c) - sums[c] / inserted[c])) < 1e-9


@pytest.mark.slow
def test_c08_synthetic_benchmark(tmp_path):
    with criterion(8, "synthetic benchmark reproduces the qualitative method ordering", max_seconds=300):
        cfg = load_config(BENCHMARK_CONFIG)
        assert cfg.synth.num_classes == 10 and cfg.synth.dim == 16
        assert cfg.synth.per_class == 600 and cfg.synth.instances_per_class == 5
        assert len(cfg.seeds) == 10
        report = run_experiment(cfg, tmp_path)
        omega = {o: {m: v["omega_all"]["mean"] for m, v in e["methods"].items()}
                 for o, e in report["orderings"].items()}
        summary = "; ".join(
            f"{o}: " + ", ".join(f"{m}={v:.3f}" for m, v in om.items()) for o, om in omega.items())
        print(summary)
        # (a)
        for o in ("iid", "class_iid", "instance", "class_instance"):
            assert omega[o]["slda_plastic"] >= 0.90, (o, omega[o])
        # (b)
        for o in ("class_iid", "class_instance"):
            ft, fx, pl = omega[o]["finetune"], omega[o]["slda_fixed"], omega[o]["slda_plastic"]
            assert ft <= fx <= pl, (o, omega[o])
            assert pl - ft >= 0.3, (o, omega[o])
        # (c)
        assert omega["iid"]["finetune"] >= 0.85, omega["iid"]


def test_c09_metric_spot_checks():
    with criterion(9, "normalized-score and efficiency worked examples"):
        assert omega_all([0.5, 0.5], [0.5, 0.5]) == 1.0
        assert abs(omega_all([0.4, 0.6], [0.8, 0.9]) - 0.58335) < 1e-4
        assert abs(omega_all([0.4, 0.6], [0.8, 0.9]) - 7 / 12) < 1e-15
        assert abs(omega_all([1.0], [0.9]) - 1.111) < 1e-3
        ce, me = efficiency_scores(27 * 60, DEFAULT_MAX_TIME_SECONDS, 0.003e9, DEFAULT_MAX_MEM_BYTES)
        assert ce == 0.99375 and me == 0.9994
        assert efficiency_scores(DEFAULT_MAX_TIME_SECONDS, DEFAULT_MAX_TIME_SECONDS, 0, 1)[0] == 0.0


def test_c10_determinism_and_io(tmp_path):
    with criterion(10, "byte-identical reruns; lossless bank and snapshot round trips"):
        raw = {
            "synth": {"seed": 4, "num_classes": 4, "dim": 6, "per_class": 60, "instances_per_class": 3,
                      "class_mean_spread": 3.0, "test_per_class": 20, "test_instances_per_class": 2},
            "methods": [{"name": "slda_plastic", "kind": "slda"},
                        {"name": "slda_fixed", "kind": "slda", "mode": "fixed"},
                        {"name": "exstream", "kind": "exstream", "capacity": 5, "base_epochs": 2},
                        {"name": "finetune", "kind": "finetune", "base_epochs": 2},
                        {"name": "ncm", "kind": "ncm"}],
            "seeds": [0, 1],
            "orderings": ["iid", "class_iid", "instance", "class_instance"],
            "base_init": {"iid": {"samples": 40}, "instance": {"samples": 40},
                          "class_iid": {"classes": 1}, "class_instance": {"classes": 1}},
            "eval_every": {"samples": 40},
            "offline": {"sgd": {"epochs": 5}},
        }
        cfg = config_from_dict(raw)
        for name in ("a", "b"):
            run_experiment(cfg, tmp_path / name)
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()
        ja, jb = (strip_timing(json.loads((p / "report.json").read_text())) for p in (a, b))
        assert json.dumps(ja, sort_keys=True, indent=2) == json.dumps(jb, sort_keys=True, indent=2)

        bank = synth_bank(9, 5, 7, 40, 4, 2.0)
        named = FeatureBank(bank.features, bank.labels, 5, bank.instance_ids, bank.frame_indices,
                            tuple("abcde"))
        for bk in (bank, named, FeatureBank(bank.features, bank.labels, 5)):
            data = bank_to_bytes(bk)
            assert bank_from_bytes(data).equals(bk)
            assert bank_to_bytes(bank_from_bytes(data)) == data

        rng = np.random.default_rng(10)
        m = SldaModel(7, 5, CovInit.from_bank(rng.standard_normal((30, 7))), Mode.PLASTIC)
        for zi, yi in zip(bank.features, bank.labels):
            m.learn(zi, yi)
        blob = dumps_model(m)
        back = loads_model(blob)
        assert dumps_model(back) == blob
        assert back.state_digest() == m.state_digest()


CORE50_ENV = "DEEPSLDA_CORE50_CONFIG"


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get(CORE50_ENV), reason=f"set {CORE50_ENV} to a real-feature config")
def test_c11_real_features(tmp_path):
    with criterion(11, "real-feature class_instance score within 0.03 of 0.959 (optional)"):
        cfg = load_config(os.environ[CORE50_ENV])
        report = run_experiment(cfg, tmp_path)
        got = report["orderings"]["class_instance"]["methods"]["slda_plastic"]["omega_all"]["mean"]
        print(f"class_instance slda_plastic omega = {got:.4f}")
        assert abs(got - 0.959) <= 0.03


def test_c11_skip_is_reported():
    if not os.environ.get(CORE50_ENV):
        LINES.append(f"[SKIP] 11. real-feature reproduction (optional, out of CI; set {CORE50_ENV})")
