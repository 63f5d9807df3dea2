"""The training loop: seeds, client estimates, adversaries, aggregation, update.

All clients hold the same model at every step boundary, so a single
parameter vector stands in for all of them.  Seed derivation:

* sign rules: the direction of step t is seeded with t itself;
* ZO-FedSGD: client k at step t uses ``derive_seed(run_seed, t, k)``;
* batches: ``derive_seed(run_seed, t, k, "batch")``, B draws with replacement;
* heterogeneity multiplier: ``derive_seed(run_seed, t, k, "het")``;
* random Byzantine values: ``derive_seed(run_seed, t, k, "byzantine")``.

Byzantine clients are the last ``count`` client indices.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import models
from .aggregation import (
    AggregationRule,
    RuleKind,
    VoteTally,
    aggregate_dp_feedsign,
    aggregate_feedsign,
    aggregate_zo_fedsgd,
    comm_cost,
)
from .config import ExperimentConfig, SyntheticConfig
from .models import Dataset, LogisticSpec, MLPSpec, ModelSpec, QuadraticSpec
from .orbit import (
    Orbit,
    OrbitEntry,
    PairList,
    SignVote,
    apply_pair_update,
    apply_sign_update,
    new_orbit,
)
from .prng import DirectionStream, derive_seed, make_stream
from .zo import Projection, sign, spsa_projection

log = logging.getLogger(__name__)


class PartitionError(ValueError):
    pass


class Role(enum.Enum):
    HONEST = "honest"
    BYZANTINE_REVERSE = "reverse"
    BYZANTINE_RANDOM = "random"


@dataclass
class ClientShard:
    client: int
    indices: np.ndarray
    role: Role = Role.HONEST
    het_noise: bool = False
    offset: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class FederationState:
    spec: ModelSpec
    data: Dataset
    params: np.ndarray
    shards: list[ClientShard]
    rule: AggregationRule
    eta: float
    mu: float
    run_seed: int
    batch_size: int = 16
    step: int = 0
    dp_stream: DirectionStream | None = None

    @property
    def K(self) -> int:
        return len(self.shards)

    @property
    def d(self) -> int:
        return self.params.shape[0]


@dataclass
class RoundReport:
    step: int
    rule: str
    global_loss: float
    accuracy: float | None
    projections: tuple[float, ...]
    tally: VoteTally
    uplink_bits: int
    downlink_bits: int
    entry: OrbitEntry | None = None
    wall_time: float = 0.0


# -- partitioning ------------------------------------------------------------


def _permutation(n: int, seed: int) -> np.ndarray:
    return np.argsort(make_stream(seed).uniforms(n), kind="stable")


def partition_iid(dataset: Dataset, K: int, seed: int) -> list[ClientShard]:
    if K < 1:
        raise PartitionError("K must be >= 1")
    if K > len(dataset):
        raise PartitionError(f"cannot split {len(dataset)} samples over {K} clients")
    perm = _permutation(len(dataset), seed)
    return [ClientShard(k, np.sort(part)) for k, part in enumerate(np.array_split(perm, K))]


def _largest_remainder(n: int, proportions: np.ndarray) -> np.ndarray:
    raw = proportions * n
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def partition_dirichlet(
    dataset: Dataset, K: int, beta: float, seed: int, min_size: int = 0, max_attempts: int = 1000
) -> list[ClientShard]:
    """Split each class over the clients with proportions drawn from Dir(beta * 1_K).

    Counts are rounded with the largest-remainder rule, so every sample lands
    in exactly one shard.  With ``min_size > 0`` draws are repeated (attempt
    ``a`` uses seed ``derive_seed(seed, a)``) until every shard is big enough.
    """
    if not beta > 0:
        raise PartitionError("beta must be > 0")
    if K < 1:
        raise PartitionError("K must be >= 1")
    if K > len(dataset):
        raise PartitionError(f"cannot split {len(dataset)} samples over {K} clients")
    classes = np.unique(dataset.labels)
    for attempt in range(max_attempts):
        s = seed if attempt == 0 else derive_seed(seed, attempt)
        gen = np.random.Generator(np.random.PCG64(s))
        order_stream = make_stream(derive_seed(s, "dirichlet-order"))
        parts: list[list[np.ndarray]] = [[] for _ in range(K)]
        for c in classes:
            members = np.flatnonzero(dataset.labels == c)
            members = members[np.argsort(order_stream.uniforms(len(members)), kind="stable")]
            counts = _largest_remainder(len(members), gen.dirichlet(np.full(K, beta)))
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(K):
                parts[k].append(members[bounds[k] : bounds[k + 1]])
        shards = [ClientShard(k, np.sort(np.concatenate(p))) for k, p in enumerate(parts)]
        if min(len(s_) for s_ in shards) >= min_size:
            return shards
    raise PartitionError(f"no Dirichlet split with every shard >= {min_size} after {max_attempts} attempts")


# -- one client, one round -----------------------------------------------------


def _reads_data(spec: ModelSpec) -> bool:
    return not isinstance(spec, QuadraticSpec) or spec.data_shift


def sample_batch(shard: ClientShard, state: FederationState) -> Dataset | None:
    if not _reads_data(state.spec):
        return None
    if len(shard) == 0:
        raise PartitionError(f"client {shard.client} has no data")
    stream = make_stream(derive_seed(state.run_seed, state.step, shard.client, "batch"))
    picks = stream.integers(len(shard), state.batch_size)
    return state.data.subset(shard.indices[picks])


def _het_multiplier(shard: ClientShard, state: FederationState) -> float:
    return 1.0 + make_stream(derive_seed(state.run_seed, state.step, shard.client, "het")).normal()


def _byzantine_stream(shard: ClientShard, state: FederationState) -> DirectionStream:
    return make_stream(derive_seed(state.run_seed, state.step, shard.client, "byzantine"))


def client_step(shard: ClientShard, state: FederationState, seed_for_client: int) -> Projection:
    """Projection client ``shard.client`` sends for this round's direction."""
    if shard.role is Role.BYZANTINE_RANDOM:
        return Projection(_byzantine_stream(shard, state).normal(), seed_for_client, shard.client)
    batch = sample_batch(shard, state)
    p = spsa_projection(state.spec, state.params, batch, seed_for_client, state.mu, shard.client, shard.offset)
    value = p.value
    if shard.het_noise:
        value *= _het_multiplier(shard, state)
    if shard.role is Role.BYZANTINE_REVERSE:
        value = -value
    return Projection(value, seed_for_client, shard.client)


def client_gradient(shard: ClientShard, state: FederationState) -> np.ndarray:
    """FedSGD counterpart of :func:`client_step`: a full batch gradient."""
    if shard.role is Role.BYZANTINE_RANDOM:
        return _byzantine_stream(shard, state).normals(state.d)
    g = state.spec.grad(state.params, sample_batch(shard, state), shard.offset)
    if shard.het_noise:
        g = g * _het_multiplier(shard, state)
    if shard.role is Role.BYZANTINE_REVERSE:
        g = -g
    return g


def evaluate(state: FederationState) -> tuple[float, float | None]:
    return state.spec.loss(state.params, state.data), models.accuracy(state.spec, state.params, state.data)


def run_round(state: FederationState, evaluate_loss: bool = True) -> tuple[FederationState, RoundReport]:
    """Advance the federation by one step.

    Every client computes against the same parameters; the update is only
    applied once all of them have answered, so an error leaves ``state``
    as it was.
    """
    started = time.perf_counter()
    t = state.step
    kind = state.rule.kind
    entry = None
    if kind is RuleKind.FEDSGD:
        grads = [client_gradient(sh, state) for sh in state.shards]
        mean = grads[0].copy()
        for g in grads[1:]:
            mean += g
        mean /= len(grads)
        state.params -= state.eta * mean
        values: tuple[float, ...] = ()
        tally = VoteTally(0, 0)
    elif kind is RuleKind.ZO_FEDSGD:
        projs = [client_step(sh, state, derive_seed(state.run_seed, t, sh.client)) for sh in state.shards]
        # the wire carries float32 projections
        wire = [Projection(float(np.float32(p.value)), p.seed, p.client) for p in projs]
        aggregate_zo_fedsgd(wire)
        pairs = tuple((p.seed, p.value) for p in wire)
        apply_pair_update(state.params, pairs, state.eta)
        entry = OrbitEntry(t, PairList(pairs))
        values = tuple(p.value for p in wire)
        tally = VoteTally.of([sign(v) for v in values])
    else:
        projs = [client_step(sh, state, t) for sh in state.shards]
        votes = [sign(p.value) for p in projs]
        if kind is RuleKind.FEEDSIGN:
            f = aggregate_feedsign(votes)
        else:
            f = aggregate_dp_feedsign(votes, state.rule.epsilon, state.dp_stream)
        apply_sign_update(state.params, t, state.eta, f)
        entry = OrbitEntry(t, SignVote(f))
        values = tuple(p.value for p in projs)
        tally = VoteTally.of(votes)

    up, down = comm_cost(state.rule, state.K, state.d)
    state.step = t + 1
    if evaluate_loss:
        loss_value, acc = evaluate(state)
    else:
        loss_value, acc = float("nan"), None
    report = RoundReport(
        step=t,
        rule=state.rule.name,
        global_loss=loss_value,
        accuracy=acc,
        projections=values,
        tally=tally,
        uplink_bits=up * state.K,
        downlink_bits=down,
        entry=entry,
        wall_time=time.perf_counter() - started,
    )
    return state, report


# -- whole runs ------------------------------------------------------------------


def build_model(config: ExperimentConfig, data: Dataset | None = None) -> ModelSpec:
    if config.model == "quadratic":
        optimum = make_stream(derive_seed(config.run_seed, "optimum")).normals(config.d)
        return QuadraticSpec(
            config.d,
            config.eigenvalues,
            config.base_eigenvalue,
            basis_seed=derive_seed(config.run_seed, "basis"),
            optimum=optimum,
        )
    if config.model == "logistic":
        n_features = data.n_features if data is not None else config.d
        return LogisticSpec(n_features)
    return MLPSpec(config.layers)


def build_dataset(config: ExperimentConfig) -> Dataset:
    if config.model == "quadratic":
        return models.placeholder_dataset(config.K)
    if config.dataset.path is not None:
        return models.load_csv(config.dataset.path)
    syn = config.dataset.synthetic or SyntheticConfig()
    if config.model == "logistic":
        return models.make_classification(syn.n, config.d, 2, syn.separation, syn.seed)
    return models.make_classification(syn.n, config.layers[0], config.layers[-1], syn.separation, syn.seed)


def initial_params(config: ExperimentConfig, spec: ModelSpec) -> np.ndarray:
    default = {"quadratic": 1.0, "logistic": 0.0, "mlp": 0.5}[config.model]
    scale = config.init_scale if config.init_scale is not None else default
    noise = make_stream(derive_seed(config.run_seed, "init")).normals(spec.n_params)
    if isinstance(spec, QuadraticSpec):
        return spec.optimum + scale * noise
    return scale * noise


def client_offsets(config: ExperimentConfig) -> list[np.ndarray | None]:
    """Per-client optimum shifts for the quadratic, centred so the mean client
    loss keeps its minimum at the global optimum."""
    if config.model != "quadratic" or config.client_spread == 0.0 or config.K == 1:
        return [None] * config.K
    raw = np.stack([
        make_stream(derive_seed(config.run_seed, "offset", k)).normals(config.d) for k in range(config.K)
    ])
    raw -= raw.mean(axis=0)
    return list(config.client_spread * raw)


def setup(config: ExperimentConfig) -> FederationState:
    """Federation at step 0 for ``config``."""
    data = build_dataset(config)
    spec = build_model(config, data)
    if config.model != "quadratic" and data.n_features != spec.n_features:
        raise PartitionError(f"dataset has {data.n_features} features, model expects {spec.n_features}")
    split_seed = derive_seed(config.run_seed, "partition")
    if config.beta is None:
        shards = partition_iid(data, config.K, split_seed)
    else:
        shards = partition_dirichlet(data, config.K, config.beta, split_seed, min_size=1)
    role = Role.BYZANTINE_RANDOM if config.byzantine_kind == "random" else Role.BYZANTINE_REVERSE
    for shard, offset in zip(shards, client_offsets(config)):
        shard.offset = offset
        shard.het_noise = config.het_noise
        if shard.client >= config.K - config.byzantine.count:
            shard.role = role
    dp_stream = None
    if config.rule == "dp_feedsign":
        dp_seed = config.dp_seed if config.dp_seed is not None else derive_seed(config.run_seed, "dp")
        dp_stream = make_stream(dp_seed)
    return FederationState(
        spec=spec,
        data=data,
        params=initial_params(config, spec),
        shards=shards,
        rule=config.aggregation_rule,
        eta=config.eta,
        mu=config.mu,
        run_seed=config.run_seed,
        batch_size=config.B,
        dp_stream=dp_stream,
    )


def empty_orbit(state: FederationState) -> Orbit | None:
    if state.rule.kind is RuleKind.FEDSGD:
        return None
    return new_orbit(state.rule, state.eta, state.mu, state.d, state.K, state.run_seed, state.spec.digest())


@dataclass
class TrainingResult:
    history: list[RoundReport]
    final: np.ndarray
    orbit: Orbit | None
    initial: np.ndarray
    state: FederationState = field(repr=False)

    def __iter__(self):
        # allows ``history, final, orbit = run_training(cfg)``
        return iter((self.history, self.final, self.orbit))


def run_training(
    config: ExperimentConfig,
    on_round: Callable[[FederationState, RoundReport], None] | None = None,
) -> TrainingResult:
    """Run ``config.T`` rounds.

    History keeps the rounds where the global loss was evaluated: every
    ``eval_every``-th step and the last one.  FedSGD exchanges full vectors,
    so its orbit is ``None``.
    """
    state = setup(config)
    initial = state.params.copy()
    orbit = empty_orbit(state)
    history: list[RoundReport] = []
    for t in range(config.T):
        evaluate_now = (t + 1) % config.eval_every == 0 or t == config.T - 1
        state, report = run_round(state, evaluate_loss=evaluate_now)
        if orbit is not None:
            orbit.append(report.entry)
        if evaluate_now:
            history.append(report)
            log.debug("step %d loss %.6g", t, report.global_loss)
        if on_round is not None:
            on_round(state, report)
    return TrainingResult(history, state.params.copy(), orbit, initial, state)
