import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedsign.analysis import HALF_NORMAL_MEAN, descent_step_stats
from feedsign.config import config_from_dict
from feedsign.federation import (
    PartitionError,
    Role,
    client_offsets,
    client_step,
    empty_orbit,
    partition_dirichlet,
    partition_iid,
    run_round,
    run_training,
    setup,
)
from feedsign.models import QuadraticSpec, make_classification
from feedsign.orbit import apply_entry, apply_pair_update
from feedsign.prng import derive_seed, make_stream


def cfg(**kw):
    base = {"rule": "feedsign", "model": "quadratic", "d": 20, "K": 5, "T": 20, "eta": 0.01, "run_seed": 1}
    base.update(kw)
    return config_from_dict(base)


LOGISTIC = {"model": "logistic", "d": 4, "dataset": {"synthetic": {"n": 200, "seed": 3}}}


def test_iid_partition_conserves_samples():
    data = make_classification(103, 2, seed=0)
    shards = partition_iid(data, 5, seed=4)
    idx = np.concatenate([s.indices for s in shards])
    assert np.array_equal(np.sort(idx), np.arange(103))
    assert max(len(s) for s in shards) - min(len(s) for s in shards) <= 1


def test_dirichlet_single_client_gets_everything():
    data = make_classification(50, 2, seed=0)
    (only,) = partition_dirichlet(data, 1, 0.1, seed=2)
    assert np.array_equal(only.indices, np.arange(50))


@settings(max_examples=30, deadline=None)
@given(K=st.integers(1, 10), beta=st.floats(0.01, 100.0), seed=st.integers(0, 2**63))
def test_dirichlet_conserves_samples(K, beta, seed):
    data = make_classification(120, 2, 3, seed=1)
    shards = partition_dirichlet(data, K, beta, seed)
    idx = np.concatenate([s.indices for s in shards])
    assert np.array_equal(np.sort(idx), np.arange(120))


def test_dirichlet_large_beta_is_near_iid():
    data = make_classification(1000, 2, 2, seed=1)
    for seed in range(20):
        for shard in partition_dirichlet(data, 5, 1e3, seed):
            ratio = data.labels[shard.indices].mean()
            assert abs(ratio - 0.5) <= 0.05


def test_dirichlet_small_beta_is_skewed():
    data = make_classification(1000, 2, 2, seed=1)
    ratios = [data.labels[s.indices].mean() for s in partition_dirichlet(data, 5, 0.05, seed=3) if len(s)]
    assert max(ratios) - min(ratios) > 0.5


def test_dirichlet_min_size_retries():
    data = make_classification(40, 2, 4, seed=1)
    shards = partition_dirichlet(data, 8, 0.05, seed=1, min_size=1)
    assert min(len(s) for s in shards) >= 1
    with pytest.raises(PartitionError):
        partition_dirichlet(data, 8, 0.05, seed=1, min_size=6, max_attempts=3)


def test_partition_rejects_too_many_clients():
    with pytest.raises(PartitionError):
        partition_iid(make_classification(3, 2, seed=0), 4, 0)


def test_reverse_role_negates():
    state = setup(cfg(rule="feedsign", **LOGISTIC))
    shard = state.shards[0]
    honest = client_step(shard, state, 7).value
    flipped = copy.copy(shard)
    flipped.role = Role.BYZANTINE_REVERSE
    assert client_step(flipped, state, 7).value == -honest


def test_random_role_ignores_data():
    state = setup(cfg(rule="zo_fedsgd", byzantine={"count": 1}, **LOGISTIC))
    bad = state.shards[-1]
    assert bad.role is Role.BYZANTINE_RANDOM
    v1 = client_step(bad, state, 3).value
    state.params += 1.0
    other = copy.copy(bad)
    other.indices = state.shards[0].indices
    assert client_step(other, state, 3).value == v1


def test_honest_quadratic_client_matches_own_gradient():
    state = setup(cfg(rule="zo_fedsgd", client_spread=0.5))
    shard = state.shards[2]
    p = client_step(shard, state, 11)
    z = make_stream(11).normals(20)
    g = state.spec.grad(state.params, None, shard.offset)
    assert abs(p.value - z @ g) < 1e-10 * np.linalg.norm(z) * np.linalg.norm(g)


def test_offsets_centred():
    offs = np.stack(client_offsets(cfg(client_spread=2.0)))
    assert np.allclose(offs.mean(axis=0), 0.0, atol=1e-14)
    assert client_offsets(cfg()) == [None] * 5


def test_feedsign_bits_per_round():
    _, report = run_round(setup(cfg(K=5)))
    assert (report.uplink_bits, report.downlink_bits) == (5, 1)


def test_zero_projection_update_is_noop():
    w = np.linspace(0, 1, 10)
    before = w.copy()
    apply_pair_update(w, [(1, 0.0), (2, 0.0)], 0.1)
    assert np.array_equal(w, before)


def test_single_client_sign_descent():
    spec = QuadraticSpec(50, (4.0,), 1.0, basis_seed=2, optimum=np.zeros(50))
    w = np.ones(50)
    eta = 1e-3
    deltas = descent_step_stats(spec, w, 1000, eta, sampler=5)
    g = spec.grad(w)
    bound = -eta * HALF_NORMAL_MEAN * np.linalg.norm(g) + eta**2 * np.trace(spec.hessian()) / 2
    assert deltas.mean() < 0
    se = deltas.std(ddof=1) / np.sqrt(len(deltas))
    assert abs(deltas.mean() - bound) < 4 * se


def test_single_client_vote_is_true_sign():
    state = setup(cfg(K=1))
    _, report = run_round(state)
    s = setup(cfg(K=1))
    z = make_stream(0).normals(20)
    want = 1 if z @ s.spec.grad(s.params) >= 0 else -1
    assert report.entry.payload.vote == want


@pytest.mark.parametrize(
    "extra",
    [
        {"rule": "feedsign"},
        {"rule": "zo_fedsgd"},
        {"rule": "dp_feedsign", "epsilon": 2.0},
        {"rule": "fedsgd"},
        {"rule": "feedsign", "het_noise": True, "byzantine": {"count": 2}},
        {"rule": "zo_fedsgd", "beta": 0.3, "byzantine": {"count": 1}, **LOGISTIC},
        {"rule": "feedsign", "model": "mlp", "layers": [3, 4, 3], "dataset": {"synthetic": {"n": 90}}},
    ],
)
def test_training_is_deterministic(extra):
    c = cfg(**extra)
    a, b = run_training(c), run_training(c)
    assert np.array_equal(a.final, b.final)
    assert [(r.step, r.global_loss, r.accuracy, r.tally) for r in a.history] == [
        (r.step, r.global_loss, r.accuracy, r.tally) for r in b.history
    ]


def test_zero_steps():
    r = run_training(cfg(T=0))
    assert r.history == [] and r.orbit.T == 0
    assert np.array_equal(r.final, r.initial)


def test_eval_every_keeps_last_round():
    r = run_training(cfg(T=23, eval_every=10))
    assert [h.step for h in r.history] == [9, 19, 22]


@pytest.mark.parametrize("rule,extra", [("feedsign", {}), ("zo_fedsgd", {}), ("dp_feedsign", {"epsilon": 0.5})])
def test_each_round_replays_from_its_entry(rule, extra):
    state = setup(cfg(rule=rule, **extra))
    for _ in range(15):
        before = state.params.copy()
        state, report = run_round(state, evaluate_loss=False)
        apply_entry(before, _header(state), report.entry)
        assert np.array_equal(before, state.params)


def _header(state):
    return empty_orbit(state).header


def test_zo_wire_values_are_float32():
    _, report = run_round(setup(cfg(rule="zo_fedsgd")))
    for _, v in report.entry.payload.pairs:
        assert float(np.float32(v)) == v
    assert [s for s, _ in report.entry.payload.pairs] == [derive_seed(1, 0, k) for k in range(5)]


def test_byzantine_clients_are_last():
    state = setup(cfg(byzantine={"count": 2}))
    assert [s.role for s in state.shards] == [Role.HONEST] * 3 + [Role.BYZANTINE_REVERSE] * 2
