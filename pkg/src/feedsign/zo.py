"""SPSA gradient projections (one direction per estimate)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import Dataset, ModelSpec
from .prng import CHUNK, direction, gaussian_direction, make_stream, perturb_in_place


class EstimationError(ArithmeticError):
    """A perturbed forward pass produced a non-finite loss."""

    def __init__(self, loss_value: float, side: str):
        super().__init__(f"non-finite loss {loss_value!r} at w {side} mu*z")
        self.loss_value = loss_value


@dataclass(frozen=True)
class Projection:
    value: float
    seed: int
    client: int = 0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"projection must be finite, got {self.value!r}")


def spsa_projection(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Dataset | None,
    seed: int,
    mu: float = 1e-3,
    client: int = 0,
    offset: np.ndarray | None = None,
) -> Projection:
    """Central-difference estimate of ``z . grad L(w, batch)`` along ``z`` from ``seed``.

    ``params`` is perturbed in place to ``w + mu z``, restored from a snapshot,
    perturbed to ``w - mu z`` and restored again.  Restoring by copy rather
    than by walking back is deliberate: in float64 ``(w + mu z) - mu z`` does
    not return every entry to its original bits.  For ``d <= CHUNK`` the
    direction is drawn once and reused for both sides.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    snapshot = params.copy()
    z = direction(seed, params.shape[0]) if params.shape[0] <= CHUNK else None
    try:
        _shift(params, seed, z, mu)
        plus = spec.loss(params, batch, offset)
        np.copyto(params, snapshot)
        _shift(params, seed, z, -mu)
        minus = spec.loss(params, batch, offset)
    finally:
        np.copyto(params, snapshot)
    if not math.isfinite(plus):
        raise EstimationError(plus, "+")
    if not math.isfinite(minus):
        raise EstimationError(minus, "-")
    return Projection((plus - minus) / (2.0 * mu), seed, client)


def _shift(params: np.ndarray, seed: int, z: np.ndarray | None, scale: float) -> None:
    # same per-entry arithmetic as perturb_in_place: fl(w + fl(scale * z))
    if z is None:
        perturb_in_place(params, seed, scale)
    else:
        params += z * scale


def zo_gradient_estimate(p: Projection, dim: int) -> np.ndarray:
    """``p.value * z`` with ``z`` regenerated from ``p.seed``."""
    return p.value * gaussian_direction(make_stream(p.seed), dim)


def sign(x: float) -> int:
    """+1 for x >= 0, -1 for x < 0.  Zero maps to +1 so replays stay deterministic."""
    if math.isnan(x):
        raise ValueError("sign of NaN")
    return 1 if x >= 0 else -1
