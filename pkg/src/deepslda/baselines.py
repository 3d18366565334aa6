"""Streaming comparison methods that train a softmax output layer, plus NCM.

* ExStream: per-class prototype buffers that merge their two closest
  members when full, followed by one SGD step over (a capped sample of)
  the buffer per incoming sample.
* Fine-tuning: one SGD step on each incoming sample, no memory.
* Nearest class mean on running class means.
* Offline upper bound: multi-epoch minibatch SGD over a whole dataset.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyBank, EmptyBatch, LabelOutOfRange, NoClassesSeen


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 50


# -- softmax readout ---------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_loss(weights, bias, z, y, weight_decay=0.0) -> float:
    """Mean cross-entropy plus ``weight_decay/2 * ||W||^2`` (bias not decayed)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    logp = _log_softmax(z @ weights.T + bias)
    ce = -logp[np.arange(len(y)), y].mean()
    return float(ce + 0.5 * weight_decay * np.sum(weights * weights))


def softmax_grad(weights, bias, z, y, weight_decay=0.0) -> tuple[np.ndarray, np.ndarray]:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    n = z.shape[0]
    p = np.exp(_log_softmax(z @ weights.T + bias))
    p[np.arange(n), y] -= 1.0
    p /= n
    return p.T @ z + weight_decay * weights, p.sum(axis=0)


@dataclass(frozen=True)
class SoftmaxPredictor:
    weights: np.ndarray
    bias: np.ndarray

    def scores(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.weights.T + self.bias

    def rank(self, z, k: int = 1) -> np.ndarray:
        order = np.argsort(-self.scores(z), axis=-1, kind="stable")
        return order[..., :k]


@dataclass
class SoftmaxReadout:
    """Linear softmax output layer trained with SGD + momentum."""

    weights: np.ndarray
    bias: np.ndarray
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    vel_w: np.ndarray = field(default=None, repr=False)
    vel_b: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.vel_w is None:
            self.vel_w = np.zeros_like(self.weights)
        if self.vel_b is None:
            self.vel_b = np.zeros_like(self.bias)

    @classmethod
    def zeros(cls, num_classes: int, dim: int, sgd: SgdConfig = SgdConfig()) -> "SoftmaxReadout":
        return cls(
            np.zeros((num_classes, dim)),
            np.zeros(num_classes),
            sgd.learning_rate,
            sgd.momentum,
            sgd.weight_decay,
        )

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "SoftmaxReadout":
        return SoftmaxReadout(
            self.weights.copy(),
            self.bias.copy(),
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.vel_w.copy(),
            self.vel_b.copy(),
        )

    def sgd_step(self, z, y) -> "SoftmaxReadout":
        """One momentum step on the mean cross-entropy of the batch ``(z, y)``."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if y.size == 0:
            raise EmptyBatch("sgd_step needs at least one sample")
        if z.shape != (y.size, self.weights.shape[1]):
            raise DimensionMismatch(f"batch features have shape {z.shape}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise LabelOutOfRange(f"batch labels must lie in [0, {self.num_classes})")
        gw, gb = softmax_grad(self.weights, self.bias, z, y, self.weight_decay)
        self.vel_w = self.momentum * self.vel_w + gw
        self.vel_b = self.momentum * self.vel_b + gb
        self.weights = self.weights - self.learning_rate * self.vel_w
        self.bias = self.bias - self.learning_rate * self.vel_b
        return self

    def loss(self, z, y) -> float:
        return softmax_loss(self.weights, self.bias, z, y, self.weight_decay)

    def snapshot(self) -> SoftmaxPredictor:
        w, b = self.weights.copy(), self.bias.copy()
        w.setflags(write=False)
        b.setflags(write=False)
        return SoftmaxPredictor(w, b)

    def digest(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.weights, self.bias, self.vel_w, self.vel_b))


def sgd_step(r: SoftmaxReadout, batch) -> SoftmaxReadout:
    """Functional form: returns an updated copy of ``r`` for a list of ``(z, y)``."""
    if len(batch) == 0:
        raise EmptyBatch("sgd_step needs at least one sample")
    z = np.stack([np.asarray(b[0], dtype=np.float64) for b in batch])
    y = np.array([int(b[1]) for b in batch])
    return r.copy().sgd_step(z, y)


def _minibatch_epochs(r: SoftmaxReadout, z, y, epochs: int, batch_size: int, rng) -> SoftmaxReadout:
    n = z.shape[0]
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            r.sgd_step(z[idx], y[idx])
    return r


def offline_softmax_fit(
    features,
    labels,
    num_classes: int,
    sgd: SgdConfig = SgdConfig(),
    seed: int = 0,
) -> SoftmaxReadout:
    """Offline output-layer model: ``sgd.epochs`` passes of seeded-shuffle minibatch SGD."""
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.shape[0] == 0:
        raise EmptyBank("offline fit needs at least one sample")
    r = SoftmaxReadout.zeros(num_classes, z.shape[1], sgd)
    return _minibatch_epochs(r, z, y, sgd.epochs, sgd.batch_size, np.random.default_rng(seed))


# -- prototype buffer --------------------------------------------------------


@dataclass
class Prototype:
    vector: np.ndarray
    count: int
    label: int


class PrototypeBuffer:
    """Per-class prototype sets bounded by ``capacity_per_class``.

    When a class overflows, its two closest prototypes (Euclidean) are
    replaced by their count-weighted mean, stored at the position of the
    earlier one. Distance ties go to the lexicographically lowest index pair.
    """

    def __init__(self, num_classes: int, capacity_per_class: int = 20):
        if capacity_per_class < 1:
            raise ValueError("capacity_per_class must be positive")
        self.num_classes = num_classes
        self.capacity = capacity_per_class
        self.vectors: list[list[np.ndarray]] = [[] for _ in range(num_classes)]
        self.counts: list[list[int]] = [[] for _ in range(num_classes)]

    def __len__(self) -> int:
        return sum(len(v) for v in self.vectors)

    def prototypes(self, label: int) -> list[Prototype]:
        return [Prototype(v, c, label) for v, c in zip(self.vectors[label], self.counts[label])]

    def insert(self, z, y) -> "PrototypeBuffer":
        y = int(y)
        if not 0 <= y < self.num_classes:
            raise LabelOutOfRange(f"label {y} outside [0, {self.num_classes})")
        vecs, cnts = self.vectors[y], self.counts[y]
        vecs.append(np.array(z, dtype=np.float64).reshape(-1))
        cnts.append(1)
        if len(vecs) > self.capacity:
            i, j = closest_pair(np.stack(vecs))
            ci, cj = cnts[i], cnts[j]
            vecs[i] = (ci * vecs[i] + cj * vecs[j]) / (ci + cj)
            cnts[i] = ci + cj
            del vecs[j], cnts[j]
        return self

    def centroid(self, label: int) -> np.ndarray:
        v = np.stack(self.vectors[label])
        c = np.asarray(self.counts[label], dtype=np.float64)
        return (c[:, None] * v).sum(axis=0) / c.sum()

    def as_batch(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored prototypes in class order, then insertion order."""
        zs, ys = [], []
        for k in range(self.num_classes):
            zs.extend(self.vectors[k])
            ys.extend([k] * len(self.vectors[k]))
        return np.stack(zs), np.asarray(ys, dtype=np.int64)


def closest_pair(v: np.ndarray) -> tuple[int, int]:
    diff = v[:, None, :] - v[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    d2[np.tril_indices(len(v))] = np.inf
    flat = int(np.argmin(d2))
    return divmod(flat, len(v))


# -- nearest class mean -------------------------------------------------------


def ncm_rank(means, counts, z, k: int = 1) -> np.ndarray:
    """Seen classes ordered by Euclidean distance to their mean, ties to the lower index."""
    means = np.asarray(means, dtype=np.float64)
    seen = np.asarray(counts) > 0
    if not seen.any():
        raise NoClassesSeen("NCM needs at least one seen class")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d2 = ((z[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    d2[:, ~seen] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")
    k_eff = min(k, int(seen.sum()))
    out = np.full((z.shape[0], k), -1, dtype=np.int64)
    out[:, :k_eff] = order[:, :k_eff]
    return out


def ncm_predict(means, counts, z) -> int:
    return int(ncm_rank(means, counts, z, 1)[0, 0])


# -- learners ---------------------------------------------------------------
# Every learner exposes base_fit / learn / snapshot / state_digest / memory_bytes
# so the evaluation loop can drive them interchangeably.


def _check_label(y, num_classes):
    y = int(y)
    if not 0 <= y < num_classes:
        raise LabelOutOfRange(f"label {y} outside [0, {num_classes})")
    return y


class FineTuneLearner:
    """Output-layer fine-tuning, one SGD step per sample, no buffer."""

    def __init__(self, num_classes: int, dim: int, sgd: SgdConfig = SgdConfig(),
                 base_epochs: int = 0, seed: int = 0):
        self.readout = SoftmaxReadout.zeros(num_classes, dim, sgd)
        self.sgd = sgd
        self.base_epochs = base_epochs
        self.rng = np.random.default_rng(seed)

    def base_fit(self, z, y):
        z = np.asarray(z, dtype=np.float64)
        if len(z):
            _minibatch_epochs(self.readout, z, np.asarray(y, dtype=np.int64),
                              self.base_epochs, self.sgd.batch_size, self.rng)
        return self

    def learn(self, z, y):
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        self.readout.sgd_step(z, np.array([_check_label(y, self.readout.num_classes)]))
        return self

    def snapshot(self):
        return self.readout.snapshot()

    def state_digest(self) -> str:
        return hashlib.sha256(self.readout.digest()).hexdigest()

    def memory_bytes(self) -> int:
        return 0


def finetune_learn(r: SoftmaxReadout, z, y) -> SoftmaxReadout:
    return sgd_step(r, [(z, y)])


class ExStreamLearner:
    """Prototype-buffer rehearsal training a softmax output layer."""

    def __init__(self, num_classes: int, dim: int, capacity_per_class: int = 20,
                 sgd: SgdConfig = SgdConfig(), batch_cap: int = 256,
                 base_epochs: int = 0, seed: int = 0):
        self.buffer = PrototypeBuffer(num_classes, capacity_per_class)
        self.readout = SoftmaxReadout.zeros(num_classes, dim, sgd)
        self.sgd = sgd
        self.batch_cap = batch_cap
        self.base_epochs = base_epochs
        self.dim = dim
        self.rng = np.random.default_rng(seed)

    def base_fit(self, z, y):
        z = np.asarray(z, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        for zi, yi in zip(z, y):
            self.buffer.insert(zi, yi)
        if len(z):
            _minibatch_epochs(self.readout, z, y, self.base_epochs, self.sgd.batch_size, self.rng)
        return self

    def learn(self, z, y):
        self.buffer.insert(z, y)
        bz, by = self.buffer.as_batch()
        if len(by) > self.batch_cap:
            idx = np.sort(self.rng.choice(len(by), self.batch_cap, replace=False))
            bz, by = bz[idx], by[idx]
        self.readout.sgd_step(bz, by)
        return self

    def snapshot(self):
        return self.readout.snapshot()

    def state_digest(self) -> str:
        h = hashlib.sha256(self.readout.digest())
        for k in range(self.buffer.num_classes):
            for v, c in zip(self.buffer.vectors[k], self.buffer.counts[k]):
                h.update(v.tobytes())
                h.update(int(c).to_bytes(8, "little"))
        return h.hexdigest()

    def memory_bytes(self) -> int:
        # prototype vectors only, 32-bit accounting
        return 4 * self.buffer.num_classes * self.buffer.capacity * self.dim


def exstream_learn(state: ExStreamLearner, z, y) -> ExStreamLearner:
    return state.learn(z, y)


@dataclass(frozen=True)
class NcmPredictor:
    means: np.ndarray
    counts: np.ndarray

    def rank(self, z, k: int = 1) -> np.ndarray:
        return ncm_rank(self.means, self.counts, z, k)


class NcmLearner:
    """Nearest class mean over running class means."""

    def __init__(self, num_classes: int, dim: int):
        self.means = np.zeros((num_classes, dim))
        self.counts = np.zeros(num_classes, dtype=np.int64)

    def base_fit(self, z, y):
        for zi, yi in zip(np.asarray(z, dtype=np.float64), y):
            self.learn(zi, yi)
        return self

    def learn(self, z, y):
        y = _check_label(y, len(self.counts))
        c = self.counts[y]
        self.means[y] = (c * self.means[y] + np.asarray(z, dtype=np.float64)) / (c + 1)
        self.counts[y] = c + 1
        return self

    def snapshot(self):
        return NcmPredictor(self.means.copy(), self.counts.copy())

    def state_digest(self) -> str:
        return hashlib.sha256(self.means.tobytes() + self.counts.tobytes()).hexdigest()

    def memory_bytes(self) -> int:
        k, d = self.means.shape
        return 4 * (k * d + k)
