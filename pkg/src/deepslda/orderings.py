"""Seeded stream orderings over a feature bank: iid, class_iid, instance, class_instance."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import FeatureBank
from .errors import MissingMetadata, SpecTooLarge


class OrderingKind(str, enum.Enum):
    IID = "iid"
    CLASS_IID = "class_iid"
    INSTANCE = "instance"
    CLASS_INSTANCE = "class_instance"

    @property
    def class_grouped(self) -> bool:
        return self in (OrderingKind.CLASS_IID, OrderingKind.CLASS_INSTANCE)

    @property
    def instance_grouped(self) -> bool:
        return self in (OrderingKind.INSTANCE, OrderingKind.CLASS_INSTANCE)


@dataclass(frozen=True)
class Samples:
    n: int


@dataclass(frozen=True)
class Classes:
    m: int


def parse_amount(value) -> Samples | Classes:
    """``{"samples": n}`` / ``{"classes": m}`` (or an existing Samples/Classes)."""
    if isinstance(value, (Samples, Classes)):
        return value
    if isinstance(value, dict) and len(value) == 1:
        (key, n), = value.items()
        if key == "samples":
            return Samples(int(n))
        if key == "classes":
            return Classes(int(n))
    raise ValueError(f"expected {{'samples': n}} or {{'classes': m}}, got {value!r}")


def amount_to_dict(a: Samples | Classes) -> dict:
    return {"samples": a.n} if isinstance(a, Samples) else {"classes": a.m}


@dataclass(frozen=True)
class StreamPlan:
    order: np.ndarray
    kind: OrderingKind
    seed: int
    base_init_len: int
    eval_points: tuple[int, ...]

    def __post_init__(self):
        order = np.array(self.order, dtype=np.int64)
        order.setflags(write=False)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "kind", OrderingKind(self.kind))
        object.__setattr__(self, "eval_points", tuple(int(p) for p in self.eval_points))

    def __len__(self) -> int:
        return len(self.order)

    def with_eval_points(self, points) -> "StreamPlan":
        return StreamPlan(self.order, self.kind, self.seed, self.base_init_len, tuple(points))

    def header(self) -> dict:
        return {
            "format": "deepslda-plan",
            "version": 1,
            "kind": self.kind.value,
            "seed": self.seed,
            "n": len(self.order),
            "base_init_len": self.base_init_len,
            "eval_points": list(self.eval_points),
        }


def _groups(keys: np.ndarray) -> dict[int, np.ndarray]:
    """Row indices per key, in ascending index order."""
    order = np.argsort(keys, kind="stable")
    uniq, starts = np.unique(keys[order], return_index=True)
    return dict(zip(uniq.tolist(), np.split(order, starts[1:])))


def _instance_rows(bank: FeatureBank, kind: OrderingKind) -> dict[int, np.ndarray]:
    if not bank.has_instances or (bank.instance_ids < 0).any():
        raise MissingMetadata(f"ordering {kind.value!r} needs instance_id and frame_index for every sample")
    rows = {}
    for inst, idx in _groups(bank.instance_ids).items():
        rows[inst] = idx[np.argsort(bank.frame_indices[idx], kind="stable")]
    return rows


def _order(bank: FeatureBank, kind: OrderingKind, rng: np.random.Generator) -> np.ndarray:
    labels = bank.labels
    if kind is OrderingKind.IID:
        return rng.permutation(bank.n)
    if kind is OrderingKind.CLASS_IID:
        by_class = _groups(labels)
        classes = rng.permutation(sorted(by_class))
        return np.concatenate([rng.permutation(by_class[int(c)]) for c in classes])

    rows = _instance_rows(bank, kind)
    if kind is OrderingKind.INSTANCE:
        ids = rng.permutation(sorted(rows))
        return np.concatenate([rows[int(i)] for i in ids])

    inst_by_class: dict[int, list[int]] = {}
    for inst, idx in rows.items():
        cls = np.unique(labels[idx])
        if len(cls) != 1:
            raise MissingMetadata(f"instance {inst} spans several classes {cls.tolist()}")
        inst_by_class.setdefault(int(cls[0]), []).append(inst)
    parts = []
    for c in rng.permutation(sorted(inst_by_class)):
        for i in rng.permutation(inst_by_class[int(c)]):
            parts.append(rows[int(i)])
    return np.concatenate(parts)


def class_boundaries(labels_in_order: np.ndarray) -> list[int]:
    """Stream positions at which a not-yet-seen class first appears (first entry is 0)."""
    _, first = np.unique(labels_in_order, return_index=True)
    return sorted(first.tolist())


def _resolve_prefix(amount, labels_in_order) -> int:
    n = len(labels_in_order)
    if isinstance(amount, Samples):
        if amount.n < 0 or amount.n > n:
            raise SpecTooLarge(f"base init of {amount.n} samples exceeds bank of {n}")
        return amount.n
    starts = class_boundaries(labels_in_order)
    if amount.m < 0 or amount.m > len(starts):
        raise SpecTooLarge(f"base init of {amount.m} classes exceeds the {len(starts)} classes in the bank")
    return starts[amount.m] if amount.m < len(starts) else n


def _eval_points(every, base_len: int, labels_in_order) -> tuple[int, ...]:
    n = len(labels_in_order)
    if isinstance(every, Samples):
        if every.n < 1:
            raise ValueError("eval interval must be at least one sample")
        pts = list(range(base_len, n, every.n))
    else:
        if every.m < 1:
            raise ValueError("eval interval must be at least one class")
        starts = class_boundaries(labels_in_order)
        pts = [starts[j] for j in range(every.m, len(starts), every.m)]
    pts = [p for p in pts if p >= base_len and p > 0 and p < n] + [n]
    return tuple(sorted(set(pts)))


def make_plan(
    bank: FeatureBank,
    kind: OrderingKind | str,
    seed: int,
    base_init: Samples | Classes = Samples(0),
    eval_every: Samples | Classes | None = None,
) -> StreamPlan:
    """Build a seeded ordering of ``bank`` with its base-init prefix and eval schedule.

    With ``eval_every=None`` the stream is evaluated only at its end.
    """
    if bank.n == 0:
        raise ValueError("cannot order an empty bank")
    kind = OrderingKind(kind)
    rng = np.random.default_rng(seed)
    order = _order(bank, kind, rng)
    seq = bank.labels[order]
    base_len = _resolve_prefix(base_init, seq)
    points = _eval_points(eval_every, base_len, seq) if eval_every is not None else (bank.n,)
    return StreamPlan(order, kind, int(seed), base_len, points)


@dataclass(frozen=True)
class PlanReport:
    ok: bool
    message: str = "ok"

    def __bool__(self) -> bool:
        return self.ok


def _runs_contiguous(keys: np.ndarray):
    """Return the first key that occurs in more than one run, or None."""
    if len(keys) == 0:
        return None
    change = np.flatnonzero(keys[1:] != keys[:-1]) + 1
    run_keys = keys[np.concatenate([[0], change])]
    uniq, counts = np.unique(run_keys, return_counts=True)
    if (counts > 1).any():
        return int(uniq[np.argmax(counts > 1)])
    return None


def validate_plan(bank: FeatureBank, plan: StreamPlan) -> PlanReport:
    order = np.asarray(plan.order)
    n = bank.n
    if len(order) != n or not np.array_equal(np.sort(order), np.arange(n)):
        return PlanReport(False, "not a permutation")
    kind = plan.kind
    if kind.class_grouped:
        bad = _runs_contiguous(bank.labels[order])
        if bad is not None:
            return PlanReport(False, f"class {bad} is not contiguous")
    if kind.instance_grouped:
        if not bank.has_instances:
            return PlanReport(False, "bank lacks instance metadata")
        inst = bank.instance_ids[order]
        bad = _runs_contiguous(inst)
        if bad is not None:
            return PlanReport(False, f"instance {bad} is interleaved with other instances")
        frames = bank.frame_indices[order]
        same = inst[1:] == inst[:-1]
        desc = np.flatnonzero(same & (frames[1:] <= frames[:-1]))
        if len(desc):
            return PlanReport(False, f"instance {int(inst[desc[0] + 1])} frames are not ascending")
    if not 0 <= plan.base_init_len <= n:
        return PlanReport(False, f"base_init_len {plan.base_init_len} outside [0, {n}]")
    pts = plan.eval_points
    if not pts:
        return PlanReport(False, "no eval points")
    if any(b <= a for a, b in zip(pts, pts[1:])):
        return PlanReport(False, "eval points not strictly increasing")
    if pts[0] < plan.base_init_len or pts[-1] != n:
        return PlanReport(False, f"eval points must lie in [{plan.base_init_len}, {n}] and end at {n}")
    return PlanReport(True)


# -- manifest ------------------------------------------------------------------


def plan_to_text(plan: StreamPlan) -> str:
    lines = [json.dumps(plan.header(), sort_keys=True)]
    lines.extend(str(int(i)) for i in plan.order)
    return "\n".join(lines) + "\n"


def plan_from_text(text: str) -> StreamPlan:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty plan manifest")
    head = json.loads(lines[0])
    if head.get("format") != "deepslda-plan":
        raise ValueError("not a deepslda plan manifest")
    order = [int(x) for x in lines[1:] if x.strip()]
    if len(order) != head["n"]:
        raise ValueError(f"manifest lists {len(order)} indices, header says {head['n']}")
    return StreamPlan(order, head["kind"], head["seed"], head["base_init_len"], head["eval_points"])


def write_plan(plan: StreamPlan, path) -> None:
    Path(path).write_text(plan_to_text(plan))


def read_plan(path) -> StreamPlan:
    return plan_from_text(Path(path).read_text())
