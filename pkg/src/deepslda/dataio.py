"""Feature banks: the binary on-disk format, CSV ingestion and synthetic banks.

Binary layout (all little-endian)::

    header   magic "FBNK" | version u8 | endian tag u8 ('L') | flags u16
             | dim u32 | n u64 | num_classes u32                 (24 bytes)
    payload  features f32[n*d] | labels i32[n]
             | instance_ids i32[n]     (flag bit 0)
             | frame_indices i32[n]    (flag bit 1)
             | class names: K x (len u32 | utf-8 bytes)   (flag bit 2)
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadShape,
    BankFormatError,
    NonFiniteFeature,
    RaggedRow,
    TruncatedPayload,
    UnknownColumn,
    UnparsableNumber,
    VersionUnsupported,
)

MAGIC = b"FBNK"
VERSION = 1
_ENDIAN_LITTLE = ord("L")
_HEADER = struct.Struct("<4sBBHIQI")
FLAG_INSTANCES = 1
FLAG_FRAMES = 2
FLAG_NAMES = 4


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Immutable labelled feature vectors with optional instance/frame metadata."""

    features: np.ndarray  # n x d float32
    labels: np.ndarray  # n int32
    num_classes: int
    instance_ids: np.ndarray | None = None
    frame_indices: np.ndarray | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise BadShape(f"features must be 2-D, got shape {feats.shape}")
        labels = np.ascontiguousarray(self.labels, dtype=np.int32).reshape(-1)
        if labels.shape[0] != feats.shape[0]:
            raise BadShape(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        for name in ("instance_ids", "frame_indices"):
            col = getattr(self, name)
            if col is not None:
                col = np.ascontiguousarray(col, dtype=np.int32).reshape(-1)
                if col.shape[0] != feats.shape[0]:
                    raise BadShape(f"{name} has {col.shape[0]} entries, expected {feats.shape[0]}")
                col.setflags(write=False)
                object.__setattr__(self, name, col)
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))
            if len(self.class_names) != self.num_classes:
                raise BadShape("class_names must have one entry per class")
        feats.setflags(write=False)
        labels.setflags(write=False)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise BadShape(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_instances(self) -> bool:
        return self.instance_ids is not None and self.frame_indices is not None

    def check_finite(self) -> None:
        bad = np.argwhere(~np.isfinite(self.features))
        if len(bad):
            raise NonFiniteFeature(int(bad[0, 0]), int(bad[0, 1]))

    def validate(self) -> None:
        """Check the invariants the file format relies on."""
        self.check_finite()
        if self.instance_ids is not None and (self.instance_ids >= 0).any():
            if self.frame_indices is None:
                raise BankFormatError("instance ids present without frame indices")
            if (self.frame_indices[self.instance_ids >= 0] < 0).any():
                raise BankFormatError("negative frame index inside an instance")

    def subset(self, idx) -> "FeatureBank":
        idx = np.asarray(idx)
        return FeatureBank(
            self.features[idx],
            self.labels[idx],
            self.num_classes,
            None if self.instance_ids is None else self.instance_ids[idx],
            None if self.frame_indices is None else self.frame_indices[idx],
            self.class_names,
        )

    def equals(self, other: "FeatureBank") -> bool:
        """Bitwise equality of every column."""

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.num_classes == other.num_classes
            and self.class_names == other.class_names
            and same(self.features, other.features)
            and same(self.labels, other.labels)
            and same(self.instance_ids, other.instance_ids)
            and same(self.frame_indices, other.frame_indices)
        )

    def summary(self) -> dict:
        return {
            "n": self.n,
            "d": self.dim,
            "K": self.num_classes,
            "instances": None if self.instance_ids is None else int(len(np.unique(self.instance_ids))),
        }


# -- binary format -------------------------------------------------------------


def bank_to_bytes(bank: FeatureBank) -> bytes:
    bank.validate()
    flags = 0
    parts = [bank.features.astype("<f4").tobytes(), bank.labels.astype("<i4").tobytes()]
    if bank.instance_ids is not None:
        flags |= FLAG_INSTANCES
        parts.append(bank.instance_ids.astype("<i4").tobytes())
    if bank.frame_indices is not None:
        flags |= FLAG_FRAMES
        parts.append(bank.frame_indices.astype("<i4").tobytes())
    if bank.class_names is not None:
        flags |= FLAG_NAMES
        for name in bank.class_names:
            raw = name.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
    head = _HEADER.pack(MAGIC, VERSION, _ENDIAN_LITTLE, flags, bank.dim, bank.n, bank.num_classes)
    return head + b"".join(parts)


def bank_write(bank: FeatureBank, path) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def _take(data: bytes, off: int, nbytes: int, what: str) -> int:
    if off + nbytes > len(data):
        raise TruncatedPayload(f"payload ends inside {what}", len(data))
    return off + nbytes


def bank_from_bytes(data: bytes) -> FeatureBank:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"not a feature bank (magic {data[:4]!r})")
    if len(data) < _HEADER.size:
        raise TruncatedPayload("file ends inside header", len(data))
    _, version, endian, flags, d, n, k = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionUnsupported(f"bank format version {version} not supported (expected {VERSION})")
    if endian != _ENDIAN_LITTLE:
        raise VersionUnsupported(f"unsupported endianness tag {endian!r}")

    off = _HEADER.size
    start = off
    off = _take(data, off, 4 * n * d, "features")
    features = np.frombuffer(data, "<f4", n * d, start).reshape(n, d).astype(np.float32)
    start = off
    off = _take(data, off, 4 * n, "labels")
    labels = np.frombuffer(data, "<i4", n, start).astype(np.int32)
    instance_ids = frame_indices = names = None
    if flags & FLAG_INSTANCES:
        start = off
        off = _take(data, off, 4 * n, "instance ids")
        instance_ids = np.frombuffer(data, "<i4", n, start).astype(np.int32)
    if flags & FLAG_FRAMES:
        start = off
        off = _take(data, off, 4 * n, "frame indices")
        frame_indices = np.frombuffer(data, "<i4", n, start).astype(np.int32)
    if flags & FLAG_NAMES:
        names = []
        for _ in range(k):
            start = off
            off = _take(data, off, 4, "class name length")
            (length,) = struct.unpack_from("<I", data, start)
            start = off
            off = _take(data, off, length, "class name")
            names.append(data[start:off].decode("utf-8"))
        names = tuple(names)
    if off != len(data):
        raise BankFormatError(f"{len(data) - off} trailing bytes after payload (byte offset {off})")
    bank = FeatureBank(features, labels, int(k), instance_ids, frame_indices, names)
    bank.check_finite()
    return bank


def bank_read(path) -> FeatureBank:
    return bank_from_bytes(Path(path).read_bytes())


# -- CSV ingestion -------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for ``bank_from_csv``.

    ``features=None`` takes every column that is not the label, instance or
    frame column, in file order.
    """

    label: str = "label"
    features: tuple[str, ...] | None = None
    instance: str | None = None
    frame: str | None = None


def bank_from_csv(path, schema: CsvSchema = CsvSchema()) -> FeatureBank:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise BankFormatError(f"{path}: empty CSV, header row required") from None
        col = {name: i for i, name in enumerate(header)}
        meta = [c for c in (schema.label, schema.instance, schema.frame) if c is not None]
        for name in meta + list(schema.features or ()):
            if name not in col:
                raise UnknownColumn(name)
        feat_cols = list(schema.features) if schema.features else [h for h in header if h not in meta]
        if not feat_cols:
            raise BankFormatError("no feature columns")
        fidx = [col[c] for c in feat_cols]

        rows, labels, inst, frames = [], [], [], []
        mapping: dict[str, int] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise RaggedRow(line, len(header), len(row))
            vals = []
            for c, i in zip(feat_cols, fidx):
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise UnparsableNumber(line, c, row[i]) from None
            rows.append(vals)
            labels.append(mapping.setdefault(row[col[schema.label]].strip(), len(mapping)))
            for name, out in ((schema.instance, inst), (schema.frame, frames)):
                if name is not None:
                    try:
                        out.append(int(row[col[name]]))
                    except ValueError:
                        raise UnparsableNumber(line, name, row[col[name]]) from None

    features = np.asarray(rows, dtype=np.float32).reshape(len(rows), len(feat_cols))
    bank = FeatureBank(
        features,
        np.asarray(labels, dtype=np.int32),
        len(mapping),
        np.asarray(inst, dtype=np.int32) if schema.instance else None,
        np.asarray(frames, dtype=np.int32) if schema.frame else None,
        tuple(mapping),
    )
    bank.validate()
    return bank


# -- synthetic banks -------------------------------------------------------------


@dataclass(frozen=True)
class WithinClassCov:
    """Shape of the within-class spread of a synthetic bank.

    Each sample is ``class mean + instance offset + temporal drift + noise``:

    * ``noise_scale``: RMS standard deviation of the frame noise, which has
      one covariance shared by all classes.
    * ``noise_anisotropy``: log-normal spread of that covariance's eigenvalues
      (0 gives isotropic noise).
    * ``instance_spread``: RMS size of instance offsets, which live in a
      subspace of rank ``instance_rank``.
    * ``class_specific_instances``: give every class its own instance
      subspace. The within-class covariance then differs between classes,
      so classes stay distinguishable even when their means coincide.
    * ``frame_drift``: amplitude of a linear drift across an instance's frames.

    With the default shared subspace all classes have the same within-class
    distribution and differ only in their means.
    """

    noise_scale: float = 1.0
    noise_anisotropy: float = 1.0
    instance_spread: float = 1.0
    instance_rank: int = 2
    class_specific_instances: bool = False
    frame_drift: float = 0.5


def synth_bank(
    seed: int,
    num_classes: int,
    dim: int,
    per_class: int,
    instances_per_class: int,
    class_mean_spread: float,
    within: WithinClassCov = WithinClassCov(),
    split: str = "train",
    shared_offset: float = 0.0,
) -> FeatureBank:
    """Gaussian stand-in for CNN features with video-like instance structure.

    Class means lie on a sphere of radius ``class_mean_spread`` around a
    common centre of norm ``shared_offset`` (pooled ReLU features share a
    large positive mean component, which is what makes a softmax output
    layer interfere across classes). The class
    means and covariances depend only on ``(seed, num_classes, dim)``, so
    ``split="train"`` and ``split="test"`` share them but draw disjoint
    instances.
    """
    if min(num_classes, dim, per_class, instances_per_class) < 1:
        raise BadShape("num_classes, dim, per_class and instances_per_class must be >= 1")
    if per_class % instances_per_class:
        raise BadShape(f"per_class={per_class} is not divisible by instances_per_class={instances_per_class}")
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")

    s_struct, s_train, s_test = np.random.SeedSequence(seed).spawn(3)
    rs = np.random.default_rng(s_struct)
    directions = rs.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centre = np.abs(rs.standard_normal(dim))
    centre *= shared_offset / np.linalg.norm(centre)
    means = centre + class_mean_spread * directions

    q, _ = np.linalg.qr(rs.standard_normal((dim, dim)))
    eig = np.exp(within.noise_anisotropy * rs.standard_normal(dim))
    eig *= dim / eig.sum()
    noise_factor = within.noise_scale * q * np.sqrt(eig)
    rank = max(1, min(within.instance_rank, dim))
    n_factors = num_classes if within.class_specific_instances else 1
    inst_factors = rs.standard_normal((n_factors, dim, rank)) / np.sqrt(dim)
    inst_factors *= within.instance_spread * np.sqrt(dim / rank)
    inst_factors = np.broadcast_to(inst_factors, (num_classes, dim, rank))

    r = np.random.default_rng(s_train if split == "train" else s_test)
    frames = per_class // instances_per_class
    phase = (np.arange(frames) / max(frames - 1, 1)) - 0.5
    feats, labels, inst, fidx = [], [], [], []
    for c in range(num_classes):
        for i in range(instances_per_class):
            offset = inst_factors[c] @ r.standard_normal(rank)
            u = r.standard_normal(dim)
            u *= within.frame_drift / np.linalg.norm(u)
            noise = r.standard_normal((frames, dim)) @ noise_factor.T
            feats.append(means[c] + offset + phase[:, None] * u + noise)
            labels.append(np.full(frames, c))
            inst.append(np.full(frames, c * instances_per_class + i))
            fidx.append(np.arange(frames))
    return FeatureBank(
        np.concatenate(feats).astype(np.float32),
        np.concatenate(labels),
        num_classes,
        np.concatenate(inst),
        np.concatenate(fidx),
    )


@dataclass(frozen=True)
class SynthSpec:
    """Declarative synthetic train/test pair (used by configs and ``synth``)."""

    seed: int = 0
    num_classes: int = 10
    dim: int = 16
    per_class: int = 600
    instances_per_class: int = 5
    class_mean_spread: float = 3.0
    test_per_class: int = 200
    test_instances_per_class: int = 5
    shared_offset: float = 0.0
    within: WithinClassCov = field(default_factory=WithinClassCov)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        within = WithinClassCov(**d.pop("within", {}))
        return cls(within=within, **d)

    def build(self, split: str = "train") -> FeatureBank:
        n, m = (
            (self.per_class, self.instances_per_class)
            if split == "train"
            else (self.test_per_class, self.test_instances_per_class)
        )
        return synth_bank(
            self.seed, self.num_classes, self.dim, n, m, self.class_mean_spread, self.within, split,
            self.shared_offset,
        )
