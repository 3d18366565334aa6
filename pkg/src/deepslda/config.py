"""Experiment configuration: a single JSON document parsed into dataclasses.

Example (see ``configs/`` for complete files)::

    {
      "synth": {"seed": 0, "num_classes": 10, "dim": 16},
      "methods": [
        {"name": "slda_plastic", "kind": "slda", "mode": "plastic"},
        {"name": "finetune", "kind": "finetune"}
      ],
      "orderings": ["iid", "class_iid"],
      "seeds": [0, 1, 2],
      "base_init": {"iid": {"samples": 1200}, "class_iid": {"classes": 2}},
      "eval_every": {"samples": 1200}
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import SgdConfig
from .dataio import SynthSpec
from .errors import ConfigError
from .evaluation import DEFAULT_MAX_MEM_BYTES, DEFAULT_MAX_TIME_SECONDS, Metric, Scope
from .orderings import Classes, OrderingKind, Samples, amount_to_dict, parse_amount

METHOD_KINDS = ("slda", "exstream", "finetune", "ncm")


@dataclass(frozen=True)
class MethodConfig:
    name: str
    kind: str
    # slda
    mode: str = "plastic"
    epsilon: float = 1e-4
    cov_init: str = "from_bank"
    # "class": seed the covariance from base features minus their class means
    cov_center: str = "class"
    # exstream / finetune
    sgd: SgdConfig = field(default_factory=SgdConfig)
    base_epochs: int = 20
    capacity: int = 20
    batch_cap: int = 256


@dataclass(frozen=True)
class OfflineConfig:
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(epochs=50))
    # per_point | final | file
    mode: str = "per_point"
    curve_path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[MethodConfig, ...]
    seeds: tuple[int, ...]
    orderings: tuple[OrderingKind, ...] = (OrderingKind.IID,)
    train_bank: str | None = None
    test_bank: str | None = None
    synth: SynthSpec | None = None
    base_init: dict = field(default_factory=dict)  # ordering -> Samples | Classes
    eval_every: dict = field(default_factory=dict)  # ordering -> Samples | Classes
    offline: OfflineConfig = field(default_factory=OfflineConfig)
    metric: Metric = Metric.TOP1
    scope: Scope = Scope.ALL_TEST_DATA
    output_dir: str | None = None
    max_time_seconds: float = DEFAULT_MAX_TIME_SECONDS
    max_mem_bytes: float = DEFAULT_MAX_MEM_BYTES

    def to_dict(self) -> dict:
        """Fully resolved config, JSON-serializable; echoed into the report."""

        def conv(obj):
            if isinstance(obj, (Samples, Classes)):
                return amount_to_dict(obj)
            if dataclasses.is_dataclass(obj):
                return {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
            if isinstance(obj, dict):
                return {str(getattr(k, "value", k)): conv(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [conv(v) for v in obj]
            return getattr(obj, "value", obj)

        return conv(self)


def _sgd(d: dict, where: str, default: SgdConfig = SgdConfig()) -> SgdConfig:
    try:
        return dataclasses.replace(default, **d)
    except TypeError as exc:
        raise ConfigError(where, str(exc)) from None


def _method(d: dict, i: int) -> MethodConfig:
    where = f"methods[{i}]"
    if not isinstance(d, dict):
        raise ConfigError(where, "must be an object")
    d = dict(d)
    kind = d.get("kind")
    if kind not in METHOD_KINDS:
        raise ConfigError(f"{where}.kind", f"must be one of {METHOD_KINDS}, got {kind!r}")
    d.setdefault("name", kind)
    if "sgd" in d:
        d["sgd"] = _sgd(d["sgd"], f"{where}.sgd")
    try:
        m = MethodConfig(**d)
    except TypeError as exc:
        raise ConfigError(where, str(exc)) from None
    if m.mode not in ("fixed", "plastic"):
        raise ConfigError(f"{where}.mode", f"must be 'fixed' or 'plastic', got {m.mode!r}")
    if m.cov_init not in ("from_bank", "ones", "zero"):
        raise ConfigError(f"{where}.cov_init", f"must be from_bank, ones or zero, got {m.cov_init!r}")
    if m.cov_center not in ("class", "global"):
        raise ConfigError(f"{where}.cov_center", f"must be 'class' or 'global', got {m.cov_center!r}")
    if not 0 < m.epsilon <= 1:
        raise ConfigError(f"{where}.epsilon", "must lie in (0, 1]")
    return m


def _per_ordering(value, orderings, name, default):
    """A single amount for every ordering, or a mapping ordering -> amount."""
    if value is None:
        return {k: default for k in orderings}
    try:
        if isinstance(value, dict) and set(value) <= {k.value for k in OrderingKind} and value:
            out = {}
            for k in orderings:
                if k.value not in value:
                    raise ConfigError(name, f"no entry for ordering {k.value!r}")
                out[k] = parse_amount(value[k.value])
            return out
        amount = parse_amount(value)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(name, str(exc)) from None
    return {k: amount for k in orderings}


def config_from_dict(d: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in d:
        if key not in known:
            raise ConfigError(key, "unknown field")

    methods = d.get("methods")
    if not methods:
        raise ConfigError("methods", "at least one method is required")
    methods = tuple(_method(m, i) for i, m in enumerate(methods))
    names = [m.name for m in methods]
    if len(set(names)) != len(names) or "offline" in names:
        raise ConfigError("methods", "method names must be unique and not 'offline'")

    seeds = d.get("seeds")
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "a non-empty list of integers is required")

    try:
        orderings = tuple(OrderingKind(o) for o in d.get("orderings", ["iid"]))
    except ValueError as exc:
        raise ConfigError("orderings", str(exc)) from None
    if not orderings:
        raise ConfigError("orderings", "at least one ordering is required")

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() or base_dir is None else base_dir / p)

    train, test, synth = d.get("train_bank"), d.get("test_bank"), d.get("synth")
    if synth is not None:
        try:
            synth = SynthSpec.from_dict(synth)
        except TypeError as exc:
            raise ConfigError("synth", str(exc)) from None
    elif train is None:
        raise ConfigError("train_bank", "either train_bank/test_bank or synth is required")
    elif test is None:
        raise ConfigError("test_bank", "required when train_bank is given")

    offline = dict(d.get("offline", {}))
    if "sgd" in offline:
        offline["sgd"] = _sgd(offline["sgd"], "offline.sgd", OfflineConfig().sgd)
    try:
        offline = OfflineConfig(**offline)
    except TypeError as exc:
        raise ConfigError("offline", str(exc)) from None
    if offline.mode not in ("per_point", "final", "file"):
        raise ConfigError("offline.mode", f"must be per_point, final or file, got {offline.mode!r}")
    if offline.mode == "file":
        if not offline.curve_path:
            raise ConfigError("offline.curve_path", "required when offline.mode is 'file'")
        offline = dataclasses.replace(offline, curve_path=resolve(offline.curve_path))

    try:
        metric = Metric(d.get("metric", "top1"))
    except ValueError:
        raise ConfigError("metric", "must be top1 or top5") from None
    try:
        scope = Scope(d.get("scope", "all_test_data"))
    except ValueError:
        raise ConfigError("scope", "must be all_test_data or seen_classes_only") from None

    return ExperimentConfig(
        methods=methods,
        seeds=tuple(seeds),
        orderings=orderings,
        train_bank=resolve(train),
        test_bank=resolve(test),
        synth=synth,
        base_init=_per_ordering(d.get("base_init"), orderings, "base_init", Samples(0)),
        eval_every=_per_ordering(d.get("eval_every"), orderings, "eval_every", None),
        offline=offline,
        metric=metric,
        scope=scope,
        output_dir=d.get("output_dir"),
        max_time_seconds=float(d.get("max_time_seconds", DEFAULT_MAX_TIME_SECONDS)),
        max_mem_bytes=float(d.get("max_mem_bytes", DEFAULT_MAX_MEM_BYTES)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw, base_dir=path.parent)
