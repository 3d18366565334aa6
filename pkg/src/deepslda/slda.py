"""Deep streaming LDA output layer.

The model keeps one running mean and count per class plus a single shared
covariance. Predictions use the linear readout ``W z + b`` with
``w_k = Λ μ_k`` and ``b_k = -½ μ_k·Λ μ_k``, where ``Λ`` is the
shrinkage-regularized precision.

A model is single-writer: ``learn``/``refresh_readout`` mutate it and must
be serialized by the caller. ``snapshot()`` returns an immutable predictor
that can be shared across threads.
"""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DeepSldaError, DimensionMismatch, LabelOutOfRange, NoClassesSeen
from .numerics import ShrinkageConfig, oas_covariance, shrinkage_precision


class Mode(str, enum.Enum):
    FIXED = "fixed"
    PLASTIC = "plastic"


class CovInitKind(str, enum.Enum):
    FROM_BANK = "from_bank"
    ONES = "ones"
    ZERO = "zero"


@dataclass(frozen=True)
class CovInit:
    kind: CovInitKind
    samples: np.ndarray | None = None

    @classmethod
    def from_bank(cls, samples) -> "CovInit":
        return cls(CovInitKind.FROM_BANK, np.asarray(samples, dtype=np.float64))

    @classmethod
    def ones(cls) -> "CovInit":
        return cls(CovInitKind.ONES)

    @classmethod
    def zero(cls) -> "CovInit":
        return cls(CovInitKind.ZERO)


@dataclass(frozen=True)
class Readout:
    weights: np.ndarray  # K x d
    bias: np.ndarray  # K, -inf for unseen classes
    built_at: int


def _rank_scores(scores: np.ndarray, seen: np.ndarray, k: int) -> np.ndarray:
    """Top-k labels per row; ties go to the lower class index, unseen classes are -1."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    k_eff = min(k, int(seen.sum()))
    ranked = np.full(order.shape[:-1] + (k,), -1, dtype=np.int64)
    ranked[..., :k_eff] = order[..., :k_eff]
    return ranked


@dataclass(frozen=True)
class SldaPredictor:
    """Frozen readout; safe to share between threads."""

    weights: np.ndarray
    bias: np.ndarray
    seen: np.ndarray
    built_at: int

    def scores(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return z @ self.weights.T + self.bias

    def rank(self, z: np.ndarray, k: int = 1) -> np.ndarray:
        return _rank_scores(self.scores(z), self.seen, k)

    def predict(self, z: np.ndarray, top_k: int = 1) -> list[tuple[int, float]]:
        s = self.scores(np.asarray(z, dtype=np.float64).reshape(-1))
        labels = _rank_scores(s, self.seen, top_k)
        return [(int(c), float(s[c])) for c in labels if c >= 0]


class SldaModel:
    """Streaming LDA with a fixed or plastic shared covariance.

    ``t`` starts at the number of seeding samples for ``CovInit.from_bank``
    and at 0 otherwise; a plastic model increments it once per learned sample.
    """

    def __init__(
        self,
        dim: int,
        num_classes: int,
        cov_init: CovInit | None = None,
        mode: Mode | str = Mode.PLASTIC,
        shrinkage: ShrinkageConfig = ShrinkageConfig(),
    ):
        if dim < 1 or num_classes < 1:
            raise ValueError("dim and num_classes must be positive")
        cov_init = cov_init if cov_init is not None else CovInit.zero()
        self.dim = int(dim)
        self.num_classes = int(num_classes)
        self.mode = Mode(mode)
        self.shrinkage = shrinkage
        self.cov_init_kind = CovInitKind(cov_init.kind)
        self.means = np.zeros((num_classes, dim), dtype=np.float64)
        self.counts = np.zeros(num_classes, dtype=np.int64)

        if self.cov_init_kind is CovInitKind.FROM_BANK:
            samples = np.asarray(cov_init.samples, dtype=np.float64)
            if samples.ndim != 2 or samples.shape[1] != dim:
                raise DimensionMismatch(
                    f"covariance seed samples have shape {samples.shape}, expected (n, {dim})"
                )
            self.sigma = oas_covariance(samples)
            self.t = int(samples.shape[0])
        elif self.cov_init_kind is CovInitKind.ONES:
            self.sigma = np.ones((dim, dim), dtype=np.float64)
            self.t = 0
        else:
            self.sigma = np.zeros((dim, dim), dtype=np.float64)
            self.t = 0

        self.total_learned = 0
        self._precision: np.ndarray | None = None
        self._readout: Readout | None = None

    # -- learning -------------------------------------------------------

    @property
    def seen_classes(self) -> set[int]:
        return {int(k) for k in np.flatnonzero(self.counts)}

    def _check(self, z, y) -> tuple[np.ndarray, int]:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.shape[0] != self.dim:
            raise DimensionMismatch(f"feature has length {z.shape[0]}, model expects {self.dim}")
        y = int(y)
        if not 0 <= y < self.num_classes:
            raise LabelOutOfRange(f"label {y} outside [0, {self.num_classes})")
        return z, y

    def _update_mean(self, z: np.ndarray, y: int) -> None:
        c = self.counts[y]
        self.means[y] = (c * self.means[y] + z) / (c + 1)
        self.counts[y] = c + 1
        self.total_learned += 1

    def learn(self, z, y) -> "SldaModel":
        """Absorb one labelled feature vector.

        In plastic mode the covariance update runs first and uses the
        class mean from before this sample.
        """
        z, y = self._check(z, y)
        if self.mode is Mode.PLASTIC:
            t = self.t
            diff = z - self.means[y]
            delta = t * np.outer(diff, diff) / (t + 1)
            self.sigma = (t * self.sigma + delta) / (t + 1)
            self.t = t + 1
        self._update_mean(z, y)
        self._readout = None
        return self

    def base_fit(self, features, labels) -> "SldaModel":
        """Seed the model from a base-initialization set.

        Same as ``learn`` on each sample in order, except that a covariance
        seeded from a bank is left as the OAS estimate instead of being
        updated sample by sample.
        """
        z = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels)
        if z.size == 0 and y.size == 0:
            return self
        if z.ndim != 2 or z.shape[1] != self.dim:
            raise DimensionMismatch(f"base features have shape {z.shape}, expected (n, {self.dim})")
        if y.shape[0] != z.shape[0]:
            raise DimensionMismatch(f"{z.shape[0]} base features but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise LabelOutOfRange(f"base labels must lie in [0, {self.num_classes})")
        if self.cov_init_kind is CovInitKind.FROM_BANK:
            for zi, yi in zip(z, y):
                self._update_mean(zi, int(yi))
            self._readout = None
        else:
            for zi, yi in zip(z, y):
                self.learn(zi, yi)
        return self

    # -- readout --------------------------------------------------------

    def precision(self) -> np.ndarray:
        if self.mode is Mode.FIXED and self._precision is not None:
            return self._precision
        lam = shrinkage_precision(self.sigma, self.shrinkage)
        if self.mode is Mode.FIXED:
            self._precision = lam
        return lam

    def refresh_readout(self) -> Readout:
        seen = self.counts > 0
        if not seen.any():
            raise NoClassesSeen("cannot build a readout before any class has been learned")
        lam = self.precision()
        w = np.zeros_like(self.means)
        w[seen] = self.means[seen] @ lam
        b = np.full(self.num_classes, -np.inf)
        b[seen] = -0.5 * np.sum(self.means[seen] * w[seen], axis=1)
        self._readout = Readout(w, b, self.total_learned)
        return self._readout

    @property
    def readout(self) -> Readout:
        if self._readout is None:
            return self.refresh_readout()
        return self._readout

    @property
    def readout_is_stale(self) -> bool:
        return self._readout is None

    def snapshot(self) -> SldaPredictor:
        r = self.readout
        w, b, seen = r.weights.copy(), r.bias.copy(), self.counts > 0
        for a in (w, b, seen):
            a.setflags(write=False)
        return SldaPredictor(w, b, seen, r.built_at)

    def scores(self, z) -> np.ndarray:
        r = self.readout
        return np.asarray(z, dtype=np.float64) @ r.weights.T + r.bias

    def rank(self, z, k: int = 1) -> np.ndarray:
        return _rank_scores(self.scores(z), self.counts > 0, k)

    def predict(self, z, top_k: int = 1) -> list[tuple[int, float]]:
        """Seen classes ranked by ``W z + b``, best first, at most ``top_k`` of them."""
        if top_k < 1:
            raise ValueError("top_k must be positive")
        return self.snapshot().predict(z, top_k)

    # -- accounting and persistence --------------------------------------

    def memory_bytes(self) -> int:
        return slda_memory_bytes(self.num_classes, self.dim)

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.means, self.counts, self.sigma):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(struct.pack("<Q", self.t))
        return h.hexdigest()

    def save(self, path) -> None:
        Path(path).write_bytes(dumps_model(self))

    @classmethod
    def load(cls, path) -> "SldaModel":
        return loads_model(Path(path).read_bytes())


def slda_memory_bytes(num_classes: int, dim: int) -> int:
    """Storage for means, covariance and counts, accounted as 32-bit values."""
    return 4 * (num_classes * dim + dim * dim + num_classes)


# snapshot container: magic, version, mode, cov-init kind, pad, d, K, eps, t
_MAGIC = b"SLDA"
_VERSION = 1
_HEADER = struct.Struct("<4sBBBxIIdQ")
_MODE_CODES = {Mode.FIXED: 0, Mode.PLASTIC: 1}
_INIT_CODES = {CovInitKind.ZERO: 0, CovInitKind.ONES: 1, CovInitKind.FROM_BANK: 2}


class SnapshotFormatError(DeepSldaError, ValueError):
    pass


def dumps_model(model: SldaModel) -> bytes:
    head = _HEADER.pack(
        _MAGIC,
        _VERSION,
        _MODE_CODES[model.mode],
        _INIT_CODES[model.cov_init_kind],
        model.dim,
        model.num_classes,
        model.shrinkage.epsilon,
        model.t,
    )
    return b"".join(
        [
            head,
            model.counts.astype("<i8").tobytes(),
            model.means.astype("<f8").tobytes(),
            model.sigma.astype("<f8").tobytes(),
        ]
    )


def loads_model(data: bytes) -> SldaModel:
    if len(data) < _HEADER.size:
        raise SnapshotFormatError("snapshot shorter than its header")
    magic, version, mode, init, d, k, eps, t = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    expected = _HEADER.size + 8 * (k + k * d + d * d)
    if len(data) != expected:
        raise SnapshotFormatError(f"snapshot has {len(data)} bytes, expected {expected}")
    modes = {v: m for m, v in _MODE_CODES.items()}
    inits = {v: m for m, v in _INIT_CODES.items()}
    model = SldaModel(d, k, CovInit.zero(), modes[mode], ShrinkageConfig(eps))
    model.cov_init_kind = inits[init]
    off = _HEADER.size
    model.counts = np.frombuffer(data, "<i8", k, off).astype(np.int64)
    off += 8 * k
    model.means = np.frombuffer(data, "<f8", k * d, off).reshape(k, d).astype(np.float64)
    off += 8 * k * d
    model.sigma = np.frombuffer(data, "<f8", d * d, off).reshape(d, d).astype(np.float64)
    model.t = int(t)
    model.total_learned = int(model.counts.sum())
    return model
