"""Small models with exact gradients: a controllable quadratic, binary logistic
regression and a tanh MLP.  Everything is float64."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .prng import derive_seed, make_stream


class ParameterShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus one integer label per row.  A batch is just a
    Dataset built from a subset of rows."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if labels.shape != (features.shape[0],):
            raise ValueError("need exactly one label per sample")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("a batch needs at least one sample")
        if idx.min() < 0 or idx.max() >= len(self):
            raise IndexError("batch index out of range")
        return Dataset(self.features[idx], self.labels[idx])

    def class_counts(self, n_classes: int | None = None) -> np.ndarray:
        n = n_classes if n_classes is not None else int(self.labels.max(initial=-1)) + 1
        return np.bincount(self.labels, minlength=n)


def load_csv(path: str | Path) -> Dataset:
    """Read ``label,feat1,...,featN`` rows.  Blank lines and ``#`` comments are skipped."""
    table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, dtype=np.float64)
    labels = table[:, 0]
    if not np.all(labels == np.round(labels)) or labels.min(initial=0) < 0:
        raise ValueError(f"{path}: labels must be non-negative integers")
    return Dataset(table[:, 1:], labels.astype(np.int64))


def save_csv(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(",".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def make_classification(
    n_samples: int,
    n_features: int,
    n_classes: int = 2,
    separation: float = 2.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian blobs: class ``c`` is centred at ``separation/2 * m_c`` with
    ``m_c`` a random unit vector; within-class noise is N(0, I).  Labels are
    assigned round-robin so classes are balanced."""
    if n_samples < 1 or n_features < 1 or n_classes < 2:
        raise ValueError("need n_samples >= 1, n_features >= 1, n_classes >= 2")
    stream = make_stream(derive_seed(seed, "make_classification"))
    centres = stream.normals(n_classes * n_features).reshape(n_classes, n_features)
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    centres *= separation / 2.0
    labels = np.arange(n_samples) % n_classes
    noise = stream.normals(n_samples * n_features).reshape(n_samples, n_features)
    return Dataset(centres[labels] + noise, labels)


def placeholder_dataset(n_samples: int) -> Dataset:
    """Featureless rows, used where the loss does not read the data."""
    return Dataset(np.zeros((n_samples, 0)), np.zeros(n_samples, dtype=np.int64))


def _digest(payload: dict, *arrays: np.ndarray) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode())
    for arr in arrays:
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return int.from_bytes(h.digest(), "little")


def _check_params(params: np.ndarray, n: int) -> None:
    if params.ndim != 1 or params.shape[0] != n:
        raise ParameterShapeError(f"expected {n} parameters, got shape {params.shape}")


@dataclass(frozen=True, eq=False)
class QuadraticSpec:
    """``L(w) = 1/2 (w - w* - o)^T H (w - w* - o)`` with

        H = base * I + U diag(top) U^T

    where ``U`` is a ``dim x len(top)`` orthonormal basis drawn from
    ``basis_seed``.  The spectrum is ``base + top[i]`` plus ``base`` repeated
    ``dim - len(top)`` times, so the effective rank ``tr(H) / ||H||`` is set
    directly by the eigenvalue list.

    ``o`` is an optional per-client optimum shift (zero for the global loss).
    With ``data_shift=True`` every sample row is also treated as a shift and
    the loss is averaged over the batch rows (no batch means no shift);
    otherwise the batch is ignored.
    """

    dim: int
    top: tuple[float, ...] = ()
    base: float = 1.0
    basis_seed: int = 0
    optimum: np.ndarray | None = None
    data_shift: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if len(self.top) > self.dim:
            raise ValueError("more top eigenvalues than dimensions")
        object.__setattr__(self, "top", tuple(float(v) for v in self.top))
        if self.base < 0 or any(self.base + v < 0 for v in self.top):
            raise ValueError("H must be positive semidefinite")
        opt = np.zeros(self.dim) if self.optimum is None else np.asarray(self.optimum, np.float64)
        if opt.shape != (self.dim,):
            raise ParameterShapeError("optimum length must equal dim")
        object.__setattr__(self, "optimum", opt)

    @property
    def n_params(self) -> int:
        return self.dim

    @cached_property
    def basis(self) -> np.ndarray:
        r = len(self.top)
        if r == 0:
            return np.zeros((self.dim, 0))
        g = make_stream(self.basis_seed).normals(self.dim * r).reshape(self.dim, r)
        q, _ = np.linalg.qr(g)
        return q

    @cached_property
    def _top(self) -> np.ndarray:
        return np.asarray(self.top, dtype=np.float64)

    def eigenvalues(self) -> np.ndarray:
        """Full spectrum of H, descending."""
        vals = np.concatenate([self.base + self._top, np.full(self.dim - len(self.top), self.base)])
        return np.sort(vals)[::-1]

    def effective_rank(self) -> float:
        vals = self.eigenvalues()
        return float(vals.sum() / vals[0]) if vals[0] > 0 else 0.0

    @property
    def smoothness(self) -> float:
        """L, the largest eigenvalue of H."""
        return float(self.eigenvalues()[0])

    @property
    def pl_constant(self) -> float:
        """Smallest positive eigenvalue of H."""
        vals = self.eigenvalues()
        return float(vals[vals > 0].min())

    def hessian(self) -> np.ndarray:
        u = self.basis
        return self.base * np.eye(self.dim) + (u * self._top) @ u.T

    def apply_h(self, v: np.ndarray) -> np.ndarray:
        """H @ v for a vector or for each row of a matrix."""
        u = self.basis
        if v.ndim == 1:
            return self.base * v + u @ (self._top * (u.T @ v))
        return self.base * v + ((v @ u) * self._top) @ u.T

    def _residual(self, params, data, offset):
        e = params - self.optimum
        if offset is not None:
            e = e - offset
        if self.data_shift and data is not None:
            return e[None, :] - data.features
        return e

    def loss(self, params, data=None, offset=None) -> float:
        _check_params(params, self.dim)
        e = self._residual(params, data, offset)
        he = self.apply_h(e)
        if e.ndim == 1:
            return 0.5 * float(e @ he)
        return 0.5 * float(np.mean(np.sum(e * he, axis=1)))

    def grad(self, params, data=None, offset=None) -> np.ndarray:
        _check_params(params, self.dim)
        e = self._residual(params, data, offset)
        if e.ndim == 2:
            e = e.mean(axis=0)
        return self.apply_h(e)

    def digest(self) -> int:
        return _digest(
            {"kind": "quadratic", "dim": self.dim, "top": list(self.top), "base": self.base,
             "basis_seed": self.basis_seed, "data_shift": self.data_shift},
            self.optimum,
        )


@dataclass(frozen=True)
class LogisticSpec:
    """Binary logistic regression; parameters are ``[weights..., bias]``."""

    n_features: int
    n_classes: int = 2

    def __post_init__(self):
        if self.n_classes != 2:
            raise ValueError("logistic regression here is binary only")

    @property
    def n_params(self) -> int:
        return self.n_features + 1

    def _margins(self, params, data):
        _check_params(params, self.n_params)
        if data.n_features != self.n_features:
            raise ParameterShapeError(f"data has {data.n_features} features, model expects {self.n_features}")
        scores = data.features @ params[:-1] + params[-1]
        signs = 2.0 * data.labels - 1.0
        return scores, signs

    def loss(self, params, data, offset=None) -> float:
        scores, signs = self._margins(params, data)
        return float(np.mean(np.logaddexp(0.0, -signs * scores)))

    def grad(self, params, data, offset=None) -> np.ndarray:
        scores, signs = self._margins(params, data)
        # d/ds log(1 + exp(-y s)) = -y * sigmoid(-y s)
        coef = -signs * _sigmoid(-signs * scores) / len(data)
        return np.concatenate([data.features.T @ coef, [coef.sum()]])

    def predict(self, params, data) -> np.ndarray:
        scores, _ = self._margins(params, data)
        return (scores > 0).astype(np.int64)

    def digest(self) -> int:
        return _digest({"kind": "logistic", "n_features": self.n_features})


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class MLPSpec:
    """Fully connected net, tanh hidden layers, softmax cross-entropy output.

    Parameters are laid out layer by layer as ``W`` (out x in, row-major)
    followed by ``b`` (out).
    """

    layers: tuple[int, ...] = field(default=(2, 3, 2))

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(int(n) for n in self.layers))
        if len(self.layers) < 2 or min(self.layers) < 1:
            raise ValueError("need at least an input and an output layer, all sizes >= 1")
        if self.layers[-1] < 2:
            raise ValueError("output layer needs at least 2 classes")

    @property
    def n_classes(self) -> int:
        return self.layers[-1]

    @property
    def n_features(self) -> int:
        return self.layers[0]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for i, o in zip(self.layers[:-1], self.layers[1:]))

    def unpack(self, params):
        _check_params(params, self.n_params)
        out, pos = [], 0
        for n_in, n_out in zip(self.layers[:-1], self.layers[1:]):
            w = params[pos : pos + n_out * n_in].reshape(n_out, n_in)
            pos += n_out * n_in
            b = params[pos : pos + n_out]
            pos += n_out
            out.append((w, b))
        return out

    def _forward(self, params, data):
        if data.n_features != self.layers[0]:
            raise ParameterShapeError(f"data has {data.n_features} features, model expects {self.layers[0]}")
        acts = [data.features]
        weights = self.unpack(params)
        h = data.features
        for i, (w, b) in enumerate(weights):
            h = h @ w.T + b
            if i < len(weights) - 1:
                h = np.tanh(h)
            acts.append(h)
        return weights, acts

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def loss(self, params, data, offset=None) -> float:
        _, acts = self._forward(params, data)
        logp = self._log_softmax(acts[-1])
        return float(-np.mean(logp[np.arange(len(data)), data.labels]))

    def grad(self, params, data, offset=None) -> np.ndarray:
        weights, acts = self._forward(params, data)
        n = len(data)
        delta = np.exp(self._log_softmax(acts[-1]))
        delta[np.arange(n), data.labels] -= 1.0
        delta /= n
        grads = []
        for i in range(len(weights) - 1, -1, -1):
            w, _ = weights[i]
            grads.append((delta.T @ acts[i], delta.sum(axis=0)))
            if i > 0:
                delta = (delta @ w) * (1.0 - acts[i] ** 2)
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in reversed(grads)])

    def predict(self, params, data) -> np.ndarray:
        _, acts = self._forward(params, data)
        return np.argmax(acts[-1], axis=1)

    def digest(self) -> int:
        return _digest({"kind": "mlp", "layers": list(self.layers), "activation": "tanh"})


ModelSpec = QuadraticSpec | LogisticSpec | MLPSpec


def loss(spec: ModelSpec, params: np.ndarray, batch: Dataset | None = None, offset=None) -> float:
    """Mean loss of ``spec`` at ``params`` over ``batch``."""
    return spec.loss(params, batch, offset)


def grad(spec: ModelSpec, params: np.ndarray, batch: Dataset | None = None, offset=None) -> np.ndarray:
    """Exact gradient of :func:`loss`."""
    return spec.grad(params, batch, offset)


def accuracy(spec: ModelSpec, params: np.ndarray, data: Dataset) -> float | None:
    """Classification accuracy, or ``None`` for the quadratic."""
    if not hasattr(spec, "predict"):
        return None
    return float(np.mean(spec.predict(params, data) == data.labels))
