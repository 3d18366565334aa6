"""Multi-seed, multi-ordering comparison runs and report emission."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import ExStreamLearner, FineTuneLearner, NcmLearner
from .config import ExperimentConfig, MethodConfig
from .dataio import FeatureBank, bank_read
from .errors import BankFormatError, ConfigError, SpecTooLarge
from .evaluation import (
    LearningCurve,
    efficiency_scores,
    mean_and_stderr,
    offline_curve,
    omega_all,
    run_streaming_eval,
)
from .numerics import ShrinkageConfig
from .orderings import OrderingKind, make_plan
from .slda import CovInit, SldaModel

log = logging.getLogger(__name__)


def load_banks(cfg: ExperimentConfig) -> tuple[FeatureBank, FeatureBank]:
    if cfg.synth is not None:
        return cfg.synth.build("train"), cfg.synth.build("test")
    banks = []
    for name in ("train_bank", "test_bank"):
        path = getattr(cfg, name)
        try:
            banks.append(bank_read(path))
        except FileNotFoundError:
            raise ConfigError(name, f"file not found: {path}") from None
        except BankFormatError as exc:
            raise ConfigError(name, f"{path}: {exc}") from None
    train, test = banks
    if train.dim != test.dim:
        raise ConfigError("test_bank", f"feature dim {test.dim} differs from train dim {train.dim}")
    return train, test


def class_centered(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = z.copy()
    for c in np.unique(y):
        out[y == c] -= z[y == c].mean(axis=0)
    return out


def make_learner(m: MethodConfig, num_classes: int, dim: int, base_z, base_y, seed: int):
    if m.kind == "slda":
        if m.cov_init == "from_bank":
            if len(base_y) < 2:
                raise ConfigError(f"{m.name}.cov_init", "from_bank needs a base-init prefix of >= 2 samples")
            samples = class_centered(base_z, base_y) if m.cov_center == "class" else base_z
            init = CovInit.from_bank(samples)
        else:
            init = CovInit.ones() if m.cov_init == "ones" else CovInit.zero()
        return SldaModel(dim, num_classes, init, m.mode, ShrinkageConfig(m.epsilon))
    if m.kind == "exstream":
        return ExStreamLearner(num_classes, dim, m.capacity, m.sgd, m.batch_cap, m.base_epochs, seed)
    if m.kind == "finetune":
        return FineTuneLearner(num_classes, dim, m.sgd, m.base_epochs, seed)
    if m.kind == "ncm":
        return NcmLearner(num_classes, dim)
    raise ConfigError("kind", f"unknown method kind {m.kind!r}")


@dataclass
class RunResult:
    ordering: OrderingKind
    seed: int
    offline: LearningCurve
    curves: dict[str, LearningCurve]
    train_seconds: dict[str, float]
    memory_bytes: dict[str, int]


def read_offline_curves(path) -> dict[str, tuple[tuple[int, ...], tuple[float, ...]]]:
    """CSV with columns ``ordering,position,accuracy``."""
    curves: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            curves.setdefault(row["ordering"], []).append((int(row["position"]), float(row["accuracy"])))
    return {k: tuple(zip(*sorted(v))) for k, v in curves.items()}


def run_one(cfg: ExperimentConfig, train: FeatureBank, test: FeatureBank,
            kind: OrderingKind, seed: int) -> RunResult:
    try:
        plan = make_plan(train, kind, seed, cfg.base_init[kind], cfg.eval_every[kind])
    except SpecTooLarge as exc:
        raise ConfigError("base_init", str(exc)) from None
    k = max(train.num_classes, test.num_classes)
    z = train.features.astype(np.float64)
    base = plan.order[: plan.base_init_len]
    base_z, base_y = z[base], train.labels[base].astype(np.int64)

    if cfg.offline.mode == "file":
        table = read_offline_curves(cfg.offline.curve_path)
        if kind.value not in table:
            raise ConfigError("offline.curve_path", f"no offline curve for ordering {kind.value!r}")
        pos, acc = table[kind.value]
        if tuple(pos) != plan.eval_points:
            raise ConfigError("offline.curve_path",
                              f"positions {list(pos)} do not match eval points {list(plan.eval_points)}")
        offline = LearningCurve(plan.eval_points, tuple(acc), cfg.metric, cfg.scope)
    else:
        offline = offline_curve(train, test, plan, cfg.offline.sgd, seed, cfg.metric, cfg.scope,
                                cfg.offline.mode)

    curves, seconds, memory = {}, {}, {}
    for m in cfg.methods:
        learner = make_learner(m, k, train.dim, base_z, base_y, seed)
        curve, timing = run_streaming_eval(train, test, plan, learner, cfg.metric, cfg.scope)
        curves[m.name] = curve
        seconds[m.name] = timing.train_seconds
        memory[m.name] = learner.memory_bytes()
        log.info("%s seed=%d %s final=%.4f", kind.value, seed, m.name, curve.accuracies[-1])
    return RunResult(kind, seed, offline, curves, seconds, memory)


def _run_task(args):
    return run_one(*args)


def _curves_csv(cfg: ExperimentConfig, results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ordering", "seed", "method", "position", "accuracy"])
    for r in results:
        for name, curve in [("offline", r.offline)] + [(m.name, r.curves[m.name]) for m in cfg.methods]:
            for p, a in zip(curve.positions, curve.accuracies):
                w.writerow([r.ordering.value, r.seed, name, p, repr(float(a))])
    return buf.getvalue()


def _report(cfg: ExperimentConfig, results: list[RunResult]) -> dict:
    report = {"config": cfg.to_dict(), "seeds": list(cfg.seeds), "orderings": {}}
    for kind in cfg.orderings:
        runs = [r for r in results if r.ordering is kind]
        same_points = len({r.offline.positions for r in runs}) == 1

        def curve_stats(curves):
            if not same_points:
                return None
            acc = np.array([c.accuracies for c in curves])
            return {
                "positions": list(curves[0].positions),
                "mean": acc.mean(axis=0).tolist(),
                "stderr": (acc.std(axis=0, ddof=1) / np.sqrt(len(curves))).tolist()
                if len(curves) > 1 else [0.0] * acc.shape[1],
            }

        entry = {"offline": {"curve": curve_stats([r.offline for r in runs])}, "methods": {}}
        for m in cfg.methods:
            omegas = [omega_all(r.curves[m.name].accuracies, r.offline.accuracies) for r in runs]
            o_mean, o_se = mean_and_stderr(omegas)
            finals = [r.curves[m.name].accuracies[-1] for r in runs]
            f_mean, f_se = mean_and_stderr(finals)
            secs = [r.train_seconds[m.name] for r in runs]
            mem = runs[0].memory_bytes[m.name]
            ce, me = efficiency_scores(float(np.mean(secs)), cfg.max_time_seconds, mem, cfg.max_mem_bytes)
            entry["methods"][m.name] = {
                "omega_all": {"per_seed": omegas, "mean": o_mean, "stderr": o_se},
                "final_accuracy": {"mean": f_mean, "stderr": f_se},
                "curve": curve_stats([r.curves[m.name] for r in runs]),
                "memory_bytes": mem,
                "me": me,
                # wall-clock dependent, excluded from determinism checks
                "timing": {"train_seconds_per_seed": secs, "train_seconds_mean": float(np.mean(secs)),
                           "ce": ce},
            }
        report["orderings"][kind.value] = entry
    return report


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """Run every ordering x seed x method; write ``curves.csv`` and ``report.json``."""
    train, test = load_banks(cfg)
    tasks = [(cfg, train, test, kind, seed) for kind in cfg.orderings for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]

    report = _report(cfg, results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "curves.csv").write_text(_curves_csv(cfg, results))
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def strip_timing(report: dict) -> dict:
    """Copy of a report without wall-clock dependent fields."""
    out = json.loads(json.dumps(report))
    for entry in out["orderings"].values():
        for m in entry["methods"].values():
            m.pop("timing", None)
    return out
