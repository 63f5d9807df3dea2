"""Measurements of the quantities the convergence analysis talks about."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .aggregation import aggregate_dp_feedsign, dp_plus_probability
from .models import Dataset, ModelSpec
from .prng import derive_seed, gaussian_direction, make_stream
from .zo import sign, spsa_projection

HALF_NORMAL_MEAN = math.sqrt(2.0 / math.pi)


class DegenerateDirectionError(ValueError):
    pass


class FitQualityError(ValueError):
    pass


@dataclass(frozen=True)
class SignReversalEstimate:
    step: int
    seed: int
    true_projection: float
    p_hat: float
    M: int
    B: int

    @property
    def stderr(self) -> float:
        """Binomial standard error at the worst case p = 1/2."""
        return 0.5 / math.sqrt(self.M)


def _batch_without_replacement(stream, n: int, B: int) -> np.ndarray:
    if B >= n:
        return np.arange(n)
    return np.sort(np.argpartition(stream.uniforms(n), B)[:B])


def estimate_sign_reversing_prob(
    spec: ModelSpec,
    params: np.ndarray,
    seed: int,
    dataset: Dataset,
    B: int,
    M: int,
    sampler: int,
    mu: float = 1e-3,
    step: int = 0,
) -> SignReversalEstimate:
    """Fraction of M random batches (size B, drawn without replacement) whose
    SPSA projection along seed's direction disagrees in sign with the
    full-data projection ``z . grad L(w)``."""
    if M < 1:
        raise ValueError("M must be >= 1")
    z = gaussian_direction(make_stream(seed), spec.n_params)
    true = float(z @ spec.grad(params, dataset))
    if true == 0.0:
        raise DegenerateDirectionError("direction is orthogonal to the full-data gradient")
    stream = make_stream(sampler)
    n = len(dataset)
    reversed_ = 0
    for _ in range(M):
        batch = dataset.subset(_batch_without_replacement(stream, n, B))
        p = spsa_projection(spec, params, batch, seed, mu).value
        reversed_ += sign(p) != sign(true)
    return SignReversalEstimate(step, seed, true, reversed_ / M, M, min(B, n))


def predicted_reversal_probability(p_e: float, p_b: float) -> float:
    """Overall sign-reversal probability with a Byzantine share p_b, as
    stated for the vote model: p_e + p_b - p_e p_b."""
    return p_e + p_b - p_e * p_b


def reversed_estimate_probability(p_e: float, p_b: float) -> float:
    """Reversal probability when Byzantine clients negate their own noisy
    estimate: honest wrong w.p. p_e, Byzantine wrong w.p. 1 - p_e."""
    return (1.0 - p_b) * p_e + p_b * (1.0 - p_e)


@dataclass(frozen=True)
class VoteErrorMeasurement:
    p_e: float  # fraction of raw client estimates with the wrong sign
    wrong_fraction: float  # fraction of transmitted votes with the wrong sign
    n_votes: int
    p_b: float


def byzantine_vote_errors(
    spec: ModelSpec,
    params: np.ndarray,
    seed: int,
    dataset: Dataset,
    B: int,
    K: int,
    n_byzantine: int,
    rounds: int,
    sampler: int,
    mu: float = 1e-3,
) -> VoteErrorMeasurement:
    """Simulate ``rounds`` votes of K clients at fixed ``params`` and direction.

    Each client draws a batch (with replacement) and computes its SPSA sign;
    the last ``n_byzantine`` clients send the reverse of their own sign.
    """
    if not 0 <= n_byzantine <= K:
        raise ValueError("n_byzantine must be in [0, K]")
    z = gaussian_direction(make_stream(seed), spec.n_params)
    truth = sign(float(z @ spec.grad(params, dataset)))
    stream = make_stream(sampler)
    n = len(dataset)
    raw_wrong = sent_wrong = 0
    for _ in range(rounds):
        for k in range(K):
            batch = dataset.subset(stream.integers(n, B))
            s = sign(spsa_projection(spec, params, batch, seed, mu).value)
            raw_wrong += s != truth
            if k >= K - n_byzantine:
                s = -s
            sent_wrong += s != truth
    total = rounds * K
    return VoteErrorMeasurement(raw_wrong / total, sent_wrong / total, total, n_byzantine / K)


def half_normal_check(g: np.ndarray, samples: int, sampler: int) -> float:
    """Monte Carlo mean of ``|z . g|`` over fresh standard normal ``z``.

    The exact value is ``sqrt(2/pi) * ||g||``.
    """
    g = np.asarray(g, dtype=np.float64)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not np.any(g):
        raise ValueError("g must be non-zero")
    d = g.shape[0]
    stream = make_stream(sampler)
    block = max(1, (1 << 20) // d)
    total = 0.0
    done = 0
    while done < samples:
        m = min(block, samples - done)
        z = stream.normals(m * d).reshape(m, d)
        total += float(np.abs(z @ g).sum())
        done += m
    return total / samples


@dataclass(frozen=True)
class FloorFit:
    """``gap_t ~ (gap_0 - floor) (1 - rate)^t + floor``."""

    rate: float
    floor: float
    residual: float  # RMS of log(predicted / observed)
    rms: float  # RMS of the plain residuals

    def predict(self, t, gap0: float) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return (gap0 - self.floor) * (1.0 - self.rate) ** t + self.floor


# starting points (log10 of the rate) for the multi-start fit
RATE_STARTS = np.linspace(-8.0, -0.5, 16)
LOG_RATE_BOUNDS = (-9.0, math.log10(0.999))
# default fit-quality threshold on the RMS log residual
MAX_LOG_RESIDUAL = 0.5


def fit_gap_curve(steps: Sequence[float], gaps: Sequence[float], max_residual: float = MAX_LOG_RESIDUAL) -> FloorFit:
    """Fit the exponential-decay-to-a-floor model by least squares on log gaps.

    Residuals are taken in log space so the tail near the floor weighs as
    much as the transient.  ``gap_0`` is the first observation; the rate is
    searched over log10 in ``LOG_RATE_BOUNDS`` from each of ``RATE_STARTS``
    and the floor is constrained to be >= 0.  Raises ``FitQualityError`` when
    the RMS log residual exceeds ``max_residual``.
    """
    t = np.asarray(steps, dtype=np.float64)
    t = t - t[0]
    y = np.asarray(gaps, dtype=np.float64)
    if np.any(~np.isfinite(y)) or np.any(y <= 0.0):
        raise ValueError("gaps must be finite and positive")
    if float(y.max() - y.min()) == 0.0:
        return FloorFit(0.0, float(y[0]), 0.0, 0.0)
    g0 = y[0]
    logy = np.log(y)

    def model(x):
        q = np.exp(t * math.log1p(-(10.0 ** x[0])))
        return (g0 - x[1]) * q + x[1]

    def resid(x):
        return np.log(np.maximum(model(x), 1e-300)) - logy

    best = None
    for lr in RATE_STARTS:
        r = least_squares(
            resid,
            [lr, float(y.min())],
            bounds=([LOG_RATE_BOUNDS[0], 0.0], [LOG_RATE_BOUNDS[1], np.inf]),
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        if best is None or r.cost < best.cost:
            best = r
    rate, floor = 10.0 ** best.x[0], float(best.x[1])
    log_rms = math.sqrt(2.0 * best.cost / len(y))
    rms = float(np.sqrt(np.mean((model(best.x) - y) ** 2)))
    fit = FloorFit(rate, floor, log_rms, rms)
    if log_rms > max_residual:
        raise FitQualityError(f"RMS log residual {log_rms:.3g} exceeds {max_residual}")
    return fit


def fit_error_floor(history, loss_star: float, max_residual: float = MAX_LOG_RESIDUAL) -> FloorFit:
    """Fit the floor model to a training history (``RoundReport`` objects or
    ``(step, loss)`` pairs).  Times are counted from the first entry."""
    if len(history) < 50:
        raise ValueError(f"need at least 50 history points, got {len(history)}")
    steps, gaps = [], []
    for h in history:
        step, loss = (h.step, h.global_loss) if hasattr(h, "global_loss") else h
        steps.append(step)
        gaps.append(loss - loss_star)
    return fit_gap_curve(steps, gaps, max_residual)


UNBIASED_GRID = np.linspace(-1.0, 1.0, 21)


def sign_means_uniform_noise(trials: int, sampler: int, grid: np.ndarray = UNBIASED_GRID) -> np.ndarray:
    """Mean of ``sign(p + n)``, ``n ~ U[-1, 1]``, for each ``p`` in ``grid``."""
    stream = make_stream(sampler)
    out = np.empty(len(grid))
    for i, p in enumerate(grid):
        noise = 2.0 * stream.uniforms(trials) - 1.0
        out[i] = np.where(p + noise >= 0.0, 1.0, -1.0).mean()
    return out


def unbiasedness_special_case(trials: int, sampler: int) -> float:
    """Largest ``|E[sign(p + n)] - p|`` over the 21-point grid on [-1, 1]."""
    if trials < 10_000:
        raise ValueError("use at least 10^4 trials")
    return float(np.max(np.abs(sign_means_uniform_noise(trials, sampler) - UNBIASED_GRID)))


def dp_outcome_probability(votes: Sequence[int], outcome: int, epsilon: float) -> float:
    p = dp_plus_probability(votes, epsilon)
    return p if outcome == 1 else 1.0 - p


def dp_max_ratio(K: int, epsilon: float) -> float:
    """Largest P(f | v) / P(f | v') over all vote vectors v, v' differing in
    one client and both outcomes f, computed in closed form.

    Log-probabilities are used: log P(+1 | v) = -log1p(exp(-eps S / 2)) with
    S the vote sum, which avoids cancellation in 1 - P.
    """

    def log_prob(v, f):
        s = sum(v) * f
        return -math.log1p(math.exp(-epsilon * s / 2.0))

    worst = -math.inf
    for v in itertools.product((1, -1), repeat=K):
        for k in range(K):
            w = list(v)
            w[k] = -w[k]
            for f in (1, -1):
                worst = max(worst, log_prob(v, f) - log_prob(w, f))
    return math.exp(worst)


def dp_empirical_plus_rate(votes: Sequence[int], epsilon: float, samples: int, sampler: int) -> float:
    """Fraction of +1 outputs over ``samples`` private aggregations."""
    stream = make_stream(sampler)
    hits = sum(aggregate_dp_feedsign(votes, epsilon, stream) == 1 for _ in range(samples))
    return hits / samples


def descent_step_stats(spec, params, steps: int, eta: float, sampler: int) -> np.ndarray:
    """Loss change of single-client sign steps ``w - eta sign(z.g) z`` from a
    fixed ``params``, one fresh seed per step.  Used to check the expected
    descent against ``eta * sqrt(2/pi) ||g|| - eta^2 tr(H) / 2``."""
    base = spec.loss(params)
    g = spec.grad(params)
    out = np.empty(steps)
    for i in range(steps):
        seed = derive_seed(sampler, i)
        z = gaussian_direction(make_stream(seed), spec.n_params)
        w = params - eta * sign(float(z @ g)) * z
        out[i] = spec.loss(w) - base
    return out
