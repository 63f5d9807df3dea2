import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedsign import orbit
from feedsign.aggregation import FEDSGD, FEEDSIGN, ZO_FEDSGD, RuleKind
from feedsign.config import config_from_dict
from feedsign.federation import run_round, run_training, setup
from feedsign.orbit import (
    HEADER,
    Orbit,
    OrbitEntry,
    OrbitError,
    PairList,
    ReplayError,
    SignVote,
    catch_up,
    deserialize,
    new_orbit,
    payload_size,
    replay,
    serialize,
)

from regen_golden import ORBIT_CONFIGS

GOLDEN = Path(__file__).parent / "golden"


def sign_orbit(votes, d=4):
    o = new_orbit(FEEDSIGN, 0.01, 1e-3, d, 3, 7, 0xABC)
    for t, v in enumerate(votes):
        o.append(OrbitEntry(t, SignVote(v)))
    return o


@pytest.mark.parametrize("name", sorted(ORBIT_CONFIGS))
def test_golden_three_step_bytes(name):
    result = run_training(config_from_dict(ORBIT_CONFIGS[name]))
    assert serialize(result.orbit) == (GOLDEN / f"{name}_3step.orbit").read_bytes()


def test_header_layout():
    blob = serialize(sign_orbit([1, -1, 1]))
    magic, version, code, K, d, T, seed, digest, eta, mu = struct.unpack_from("<4sBBIQQQQdd", blob)
    assert (magic, version, code, K, d, T, seed, digest) == (b"FSGN", 1, 2, 3, 4, 3, 7, 0xABC)
    assert (eta, mu) == (0.01, 1e-3)
    assert HEADER.size == 58
    assert blob[58:] == bytes([0b101])


def test_empty_orbit_is_header_only():
    assert len(serialize(sign_orbit([]))) == HEADER.size


def test_feedsign_size_ten_thousand_steps():
    o = sign_orbit([1, -1] * 5000)
    assert len(serialize(o)) - HEADER.size == 1250


@settings(max_examples=40, deadline=None)
@given(T=st.integers(0, 200), K=st.integers(1, 6))
def test_size_law(T, K):
    assert payload_size(RuleKind.FEEDSIGN, T, K) == (T + 7) // 8
    assert payload_size(RuleKind.ZO_FEDSGD, T, K) == 12 * K * T
    o = new_orbit(ZO_FEDSGD, 0.01, 1e-3, 4, K, 1, 2)
    for t in range(T):
        o.append(OrbitEntry(t, PairList(tuple((t * K + k, 0.5) for k in range(K)))))
    assert len(serialize(o)) == HEADER.size + 12 * K * T


@settings(max_examples=60, deadline=None)
@given(votes=st.lists(st.sampled_from([1, -1]), max_size=100))
def test_round_trip_sign(votes):
    blob = serialize(sign_orbit(votes))
    back = deserialize(blob)
    assert [e.payload.vote for e in back.entries] == votes
    assert serialize(back) == blob


@settings(max_examples=30, deadline=None)
@given(
    pairs=st.lists(
        st.tuples(st.integers(0, 2**64 - 1), st.floats(width=32, allow_nan=False, allow_infinity=False)),
        min_size=2,
        max_size=2,
    ),
    T=st.integers(1, 5),
)
def test_round_trip_pairs(pairs, T):
    o = new_orbit(ZO_FEDSGD, 0.01, 1e-3, 4, 2, 1, 2)
    for t in range(T):
        o.append(OrbitEntry(t, PairList(tuple(pairs))))
    blob = serialize(o)
    assert serialize(deserialize(blob)) == blob


def test_fedsgd_has_no_orbit():
    with pytest.raises(OrbitError):
        new_orbit(FEDSGD, 0.01, 1e-3, 4, 2, 1, 2)


def test_append_checks_step_and_payload():
    o = sign_orbit([1])
    with pytest.raises(OrbitError):
        o.append(OrbitEntry(3, SignVote(1)))
    with pytest.raises(OrbitError):
        o.append(OrbitEntry(1, SignVote(0)))
    with pytest.raises(OrbitError):
        o.append(OrbitEntry(1, PairList(((1, 0.5),))))


def test_deserialize_rejects_damage():
    blob = serialize(sign_orbit([1, -1, 1]))
    with pytest.raises(OrbitError):
        deserialize(blob[:10])
    with pytest.raises(OrbitError):
        deserialize(b"XXXX" + blob[4:])
    with pytest.raises(OrbitError):
        deserialize(blob + b"\x00")
    bad_version = blob[:4] + bytes([9]) + blob[5:]
    with pytest.raises(OrbitError):
        deserialize(bad_version)


def small_run(rule="feedsign", T=40, **extra):
    cfg = {"rule": rule, "model": "quadratic", "d": 30, "K": 4, "T": T, "eta": 0.01, "run_seed": 3, **extra}
    return run_training(config_from_dict(cfg))


@pytest.mark.parametrize("rule,extra", [("feedsign", {}), ("zo_fedsgd", {}), ("dp_feedsign", {"epsilon": 1.0})])
def test_replay_reproduces_final(rule, extra):
    r = small_run(rule, **extra)
    assert np.array_equal(replay(r.initial, r.orbit, r.state.spec.digest()), r.final)
    assert np.array_equal(replay(r.initial, deserialize(serialize(r.orbit))), r.final)


def test_replay_empty_is_copy():
    w = np.arange(4.0)
    out = replay(w, sign_orbit([]))
    assert np.array_equal(out, w) and out is not w


def test_prefix_replay_matches_trajectory():
    cfg = config_from_dict({"rule": "zo_fedsgd", "model": "quadratic", "d": 20, "K": 3, "T": 25, "eta": 0.01,
                            "run_seed": 9})
    checkpoints = []
    r = run_training(cfg, on_round=lambda s, rep: checkpoints.append(s.params.copy()))
    for t in range(0, 26, 5):
        want = r.initial if t == 0 else checkpoints[t - 1]
        assert np.array_equal(replay(r.initial, r.orbit.prefix(t)), want)


def test_replay_rejects_wrong_model():
    r = small_run()
    with pytest.raises(ReplayError):
        replay(r.initial, r.orbit, digest=r.state.spec.digest() ^ 1)
    with pytest.raises(ReplayError):
        replay(r.initial[:-1], r.orbit)


def test_catch_up_at_start_middle_end():
    cfg = config_from_dict({"rule": "feedsign", "model": "quadratic", "d": 25, "K": 3, "T": 30, "eta": 0.01,
                            "run_seed": 4})
    state = setup(cfg)
    initial = state.params.copy()
    log = new_orbit(state.rule, state.eta, state.mu, state.d, state.K, state.run_seed, state.spec.digest())
    assert np.array_equal(catch_up(initial, log.prefix(0), state), initial)
    for t in range(cfg.T):
        state, report = run_round(state, evaluate_loss=False)
        log.append(report.entry)
        if t in (11, cfg.T - 1):
            assert np.array_equal(catch_up(initial, log, state), state.params)


def test_catch_up_rejects_stale_prefix():
    r = small_run(T=10)
    with pytest.raises(ReplayError):
        catch_up(r.initial, r.orbit.prefix(5), r.state)


def test_save_load(tmp_path):
    r = small_run(T=13)
    path = tmp_path / "x.orbit"
    orbit.save(r.orbit, path)
    assert np.array_equal(replay(r.initial, orbit.load(path)), r.final)
