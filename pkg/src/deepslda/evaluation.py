"""Accuracy metrics, the normalized Omega score, efficiency scores and the
scheduled streaming evaluation loop."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .baselines import SgdConfig, offline_softmax_fit
from .dataio import FeatureBank
from .errors import DeepSldaError, LengthMismatch, ZeroOffline
from .orderings import StreamPlan

SECONDS_PER_HOUR = 3600.0
BYTES_PER_GB = 1e9
DEFAULT_MAX_TIME_SECONDS = 72 * SECONDS_PER_HOUR
DEFAULT_MAX_MEM_BYTES = 5 * BYTES_PER_GB


class Metric(str, enum.Enum):
    TOP1 = "top1"
    TOP5 = "top5"

    @property
    def k(self) -> int:
        return 1 if self is Metric.TOP1 else 5


class Scope(str, enum.Enum):
    ALL_TEST_DATA = "all_test_data"
    SEEN_CLASSES_ONLY = "seen_classes_only"


def topk_accuracy(predictions, truths, k: int = 1) -> float:
    """Fraction of rows whose truth is among the first ``k`` ranked labels."""
    if k < 1:
        raise ValueError("k must be >= 1")
    truths = np.asarray(truths).reshape(-1)
    if isinstance(predictions, np.ndarray) and predictions.ndim == 2:
        if predictions.shape[0] != truths.shape[0]:
            raise LengthMismatch(f"{predictions.shape[0]} predictions for {truths.shape[0]} truths")
        if truths.size == 0:
            raise LengthMismatch("no rows to score")
        hits = (predictions[:, :k] == truths[:, None]).any(axis=1)
        return float(hits.mean())
    predictions = list(predictions)
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truths)} truths")
    if not predictions:
        raise LengthMismatch("no rows to score")
    hits = sum(int(t) in [int(p) for p in list(row)[:k]] for row, t in zip(predictions, truths))
    return hits / len(truths)


def omega_all(alpha, alpha_offline) -> float:
    """Mean over evaluation points of ``alpha[t] / alpha_offline[t]``."""
    a = np.asarray(alpha, dtype=np.float64).reshape(-1)
    off = np.asarray(alpha_offline, dtype=np.float64).reshape(-1)
    if a.shape != off.shape or a.size == 0:
        raise LengthMismatch(f"alpha has {a.size} points, offline curve has {off.size}")
    if (off <= 0).any():
        t = int(np.flatnonzero(off <= 0)[0])
        raise ZeroOffline(f"offline accuracy at point {t} is {off[t]}, must be > 0")
    return float(np.mean(a / off))


def efficiency_scores(time_seconds, max_time_seconds, mem_bytes, max_mem_bytes) -> tuple[float, float]:
    """``(1 - time/max_time, 1 - mem/max_mem)``, each clamped to [0, 1]."""
    if max_time_seconds <= 0 or max_mem_bytes <= 0:
        raise ValueError("efficiency caps must be positive")
    ce = 1.0 - time_seconds / max_time_seconds
    me = 1.0 - mem_bytes / max_mem_bytes
    return min(1.0, max(0.0, ce)), min(1.0, max(0.0, me))


@dataclass(frozen=True)
class LearningCurve:
    positions: tuple[int, ...]
    accuracies: tuple[float, ...]
    metric: Metric = Metric.TOP1
    scope: Scope = Scope.ALL_TEST_DATA

    def __post_init__(self):
        if len(self.positions) != len(self.accuracies):
            raise LengthMismatch("positions and accuracies differ in length")
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise ValueError("curve positions must be strictly increasing")
        if any(not 0.0 <= x <= 1.0 for x in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.positions)

    def at(self, position: int) -> float:
        return self.accuracies[self.positions.index(position)]


@dataclass
class Timing:
    train_seconds: float = 0.0
    eval_seconds: float = 0.0


class Predictor(Protocol):
    def rank(self, z: np.ndarray, k: int = 1) -> np.ndarray: ...


class Learner(Protocol):
    def base_fit(self, z: np.ndarray, y: np.ndarray): ...
    def learn(self, z: np.ndarray, y: int): ...
    def snapshot(self) -> Predictor: ...
    def state_digest(self) -> str: ...
    def memory_bytes(self) -> int: ...


class IsolationError(DeepSldaError, RuntimeError):
    pass


def _test_rows(test: FeatureBank, scope: Scope, seen: np.ndarray) -> np.ndarray:
    if scope is Scope.ALL_TEST_DATA:
        return np.arange(test.n)
    rows = np.flatnonzero(seen[test.labels])
    if len(rows) == 0:
        raise ValueError("no test samples belong to the classes seen so far")
    return rows


def score_predictor(predictor: Predictor, z: np.ndarray, y: np.ndarray, k: int) -> float:
    return topk_accuracy(predictor.rank(z, k), y, k)


def run_streaming_eval(
    train: FeatureBank,
    test: FeatureBank,
    plan: StreamPlan,
    learner: Learner,
    metric: Metric | str = Metric.TOP1,
    scope: Scope | str = Scope.ALL_TEST_DATA,
    check_isolation: bool = False,
) -> tuple[LearningCurve, Timing]:
    """Base-fit on the plan prefix, then stream one sample at a time, scoring at each eval point.

    Training wall time excludes snapshotting and test-set scoring.
    """
    metric, scope = Metric(metric), Scope(scope)
    z_train = train.features.astype(np.float64)
    y_train = train.labels.astype(np.int64)
    z_test = test.features.astype(np.float64)
    y_test = test.labels.astype(np.int64)
    order = plan.order
    seen = np.zeros(max(train.num_classes, test.num_classes), dtype=bool)
    timing = Timing()

    base = order[: plan.base_init_len]
    t0 = time.perf_counter()
    learner.base_fit(z_train[base], y_train[base])
    timing.train_seconds += time.perf_counter() - t0
    seen[y_train[base]] = True

    pos = plan.base_init_len
    accs = []
    for point in plan.eval_points:
        t0 = time.perf_counter()
        for i in order[pos:point]:
            learner.learn(z_train[i], y_train[i])
        timing.train_seconds += time.perf_counter() - t0
        seen[y_train[order[pos:point]]] = True
        pos = point

        t0 = time.perf_counter()
        before = learner.state_digest() if check_isolation else None
        rows = _test_rows(test, scope, seen)
        accs.append(score_predictor(learner.snapshot(), z_test[rows], y_test[rows], metric.k))
        if check_isolation and learner.state_digest() != before:
            raise IsolationError(f"evaluation at position {point} changed learner state")
        timing.eval_seconds += time.perf_counter() - t0
    return LearningCurve(plan.eval_points, tuple(accs), metric, scope), timing


def offline_curve(
    train: FeatureBank,
    test: FeatureBank,
    plan: StreamPlan,
    sgd: SgdConfig = SgdConfig(),
    seed: int = 0,
    metric: Metric | str = Metric.TOP1,
    scope: Scope | str = Scope.ALL_TEST_DATA,
    mode: str = "per_point",
) -> LearningCurve:
    """Accuracy of the offline output-layer model at each eval point of ``plan``.

    ``per_point`` retrains on every sample streamed so far; ``final`` trains
    once on the whole training bank and repeats its accuracy at every point.
    """
    metric, scope = Metric(metric), Scope(scope)
    z_train = train.features.astype(np.float64)
    z_test = test.features.astype(np.float64)
    k = max(train.num_classes, test.num_classes)
    accs = []
    final_model = None
    for j, point in enumerate(plan.eval_points):
        idx = plan.order[:point]
        seen = np.zeros(k, dtype=bool)
        seen[train.labels[idx]] = True
        if mode == "per_point":
            model = offline_softmax_fit(z_train[idx], train.labels[idx], k, sgd, seed=(seed, j))
        elif mode == "final":
            if final_model is None:
                final_model = offline_softmax_fit(z_train, train.labels, k, sgd, seed=seed)
            model = final_model
        else:
            raise ValueError(f"unknown offline curve mode {mode!r}")
        rows = _test_rows(test, scope, seen)
        accs.append(score_predictor(model.snapshot(), z_test[rows], test.labels[rows], metric.k))
    return LearningCurve(plan.eval_points, tuple(accs), metric, scope)


def mean_and_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se

