"""Orbits: the per-step exchanged values of a run, enough to rebuild the model.

Binary layout (all little-endian)::

    offset  size  field
    0       4     magic b"FSGN"
    4       1     format version (1)
    5       1     rule code (1 = zo_fedsgd, 2 = feedsign, 3 = dp_feedsign)
    6       4     K, clients per step (u32)
    10      8     d, parameter count (u64)
    18      8     T, number of steps (u64)
    26      8     run seed (u64)
    34      8     model digest (u64)
    42      8     eta (f64)
    50      8     mu (f64)
    58      ...   payload

Payload for the sign rules is the vote bitmap, ceil(T/8) bytes, bit ``t % 8``
of byte ``t // 8`` set for a +1 vote; the seed of step t is t and is not
stored.  For ZO-FedSGD it is T*K records of ``(seed: u64, projection: f32)``,
12 bytes each, in client order.

Sizes: a 10 000-step sign orbit is 58 + 1250 bytes.  One bit per step is the
least an uncompressed record of independent votes can take.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import AggregationRule, RuleKind
from .prng import perturb_in_place

MAGIC = b"FSGN"
VERSION = 1
HEADER = struct.Struct("<4sBBIQQQQdd")
PAIR = struct.Struct("<Qf")

_RULE_CODES = {RuleKind.ZO_FEDSGD: 1, RuleKind.FEEDSIGN: 2, RuleKind.DP_FEEDSIGN: 3}
_CODE_RULES = {v: k for k, v in _RULE_CODES.items()}


class OrbitError(ValueError):
    pass


class ReplayError(OrbitError):
    pass


@dataclass(frozen=True)
class SignVote:
    vote: int


@dataclass(frozen=True)
class PairList:
    """``(seed, projection)`` per client; projections are float32-representable."""

    pairs: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class OrbitEntry:
    step: int
    payload: SignVote | PairList


@dataclass(frozen=True)
class OrbitHeader:
    rule: RuleKind
    eta: float
    mu: float
    d: int
    K: int
    run_seed: int
    digest: int


@dataclass
class Orbit:
    header: OrbitHeader
    entries: list[OrbitEntry] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.entries)

    def append(self, entry: OrbitEntry) -> None:
        if entry.step != len(self.entries):
            raise OrbitError(f"expected step {len(self.entries)}, got {entry.step}")
        _check_payload(self.header, entry)
        self.entries.append(entry)

    def prefix(self, t: int) -> "Orbit":
        if not 0 <= t <= len(self.entries):
            raise OrbitError(f"prefix length {t} outside [0, {len(self.entries)}]")
        return Orbit(self.header, self.entries[:t])


def _check_payload(header: OrbitHeader, entry: OrbitEntry) -> None:
    if header.rule is RuleKind.ZO_FEDSGD:
        if not isinstance(entry.payload, PairList) or len(entry.payload.pairs) != header.K:
            raise OrbitError(f"step {entry.step}: expected {header.K} seed-projection pairs")
    elif not isinstance(entry.payload, SignVote) or entry.payload.vote not in (1, -1):
        raise OrbitError(f"step {entry.step}: expected a +1/-1 vote")


def new_orbit(rule: AggregationRule, eta: float, mu: float, d: int, K: int, run_seed: int, digest: int) -> Orbit:
    if rule.kind not in _RULE_CODES:
        raise OrbitError(f"{rule.name} exchanges full vectors; it has no orbit")
    return Orbit(OrbitHeader(rule.kind, float(eta), float(mu), int(d), int(K), int(run_seed), int(digest)))


# -- update arithmetic shared by training and replay ------------------------


def apply_sign_update(params: np.ndarray, step: int, eta: float, vote: int) -> None:
    """w <- w - eta * vote * z_t, with z_t drawn from seed t."""
    perturb_in_place(params, step, -eta * vote)


def apply_pair_update(params: np.ndarray, pairs: Sequence[tuple[int, float]], eta: float) -> None:
    """w <- w - (eta / K) * sum_k p_k z_k, one client at a time in order."""
    K = len(pairs)
    for seed, value in pairs:
        perturb_in_place(params, seed, -(eta / K) * value)


def apply_entry(params: np.ndarray, header: OrbitHeader, entry: OrbitEntry) -> None:
    if isinstance(entry.payload, SignVote):
        apply_sign_update(params, entry.step, header.eta, entry.payload.vote)
    else:
        apply_pair_update(params, entry.payload.pairs, header.eta)


# -- file format -------------------------------------------------------------


def serialize(orbit: Orbit) -> bytes:
    h = orbit.header
    for t, entry in enumerate(orbit.entries):
        if entry.step != t:
            raise OrbitError(f"entries must be contiguous from 0; position {t} holds step {entry.step}")
        _check_payload(h, entry)
    head = HEADER.pack(MAGIC, VERSION, _RULE_CODES[h.rule], h.K, h.d, orbit.T, h.run_seed, h.digest, h.eta, h.mu)
    if h.rule is RuleKind.ZO_FEDSGD:
        body = b"".join(PAIR.pack(seed, value) for e in orbit.entries for seed, value in e.payload.pairs)
    else:
        bits = np.array([e.payload.vote > 0 for e in orbit.entries], dtype=bool)
        body = np.packbits(bits, bitorder="little").tobytes()
    return head + body


def deserialize(blob: bytes) -> Orbit:
    if len(blob) < HEADER.size:
        raise OrbitError(f"orbit truncated: {len(blob)} bytes, header needs {HEADER.size}")
    magic, version, code, K, d, T, run_seed, digest, eta, mu = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise OrbitError(f"bad magic {magic!r}")
    if version != VERSION:
        raise OrbitError(f"unsupported orbit version {version}")
    if code not in _CODE_RULES:
        raise OrbitError(f"unknown rule code {code}")
    header = OrbitHeader(_CODE_RULES[code], eta, mu, d, K, run_seed, digest)
    body = memoryview(blob)[HEADER.size :]
    orbit = Orbit(header)
    if header.rule is RuleKind.ZO_FEDSGD:
        need = PAIR.size * K * T
        if len(body) != need:
            raise OrbitError(f"payload is {len(body)} bytes, expected {need}")
        records = list(PAIR.iter_unpack(body))
        for t in range(T):
            pairs = tuple((s, float(v)) for s, v in records[t * K : (t + 1) * K])
            orbit.entries.append(OrbitEntry(t, PairList(pairs)))
    else:
        need = (T + 7) // 8
        if len(body) != need:
            raise OrbitError(f"payload is {len(body)} bytes, expected {need}")
        bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8), count=T, bitorder="little")
        orbit.entries.extend(OrbitEntry(t, SignVote(1 if b else -1)) for t, b in enumerate(bits))
    return orbit


def save(orbit: Orbit, path: str | Path) -> None:
    Path(path).write_bytes(serialize(orbit))


def load(path: str | Path) -> Orbit:
    return deserialize(Path(path).read_bytes())


def payload_size(rule: RuleKind, T: int, K: int) -> int:
    """Bytes after the header."""
    if rule is RuleKind.ZO_FEDSGD:
        return PAIR.size * K * T
    return (T + 7) // 8


# -- reconstruction ------------------------------------------------------------


def replay(initial: np.ndarray, orbit: Orbit, digest: int | None = None) -> np.ndarray:
    """Rebuild the model after ``orbit.T`` steps starting from ``initial``.

    ``digest`` (the model's) is checked against the header when given.
    """
    h = orbit.header
    if initial.shape != (h.d,):
        raise ReplayError(f"initial params have shape {initial.shape}, orbit expects ({h.d},)")
    if digest is not None and digest != h.digest:
        raise ReplayError(f"model digest {digest:#018x} does not match orbit {h.digest:#018x}")
    params = np.array(initial, dtype=np.float64, copy=True)
    for t, entry in enumerate(orbit.entries):
        if entry.step != t:
            raise ReplayError(f"orbit has a gap: position {t} holds step {entry.step}")
        apply_entry(params, h, entry)
    return params


def catch_up(initial: np.ndarray, orbit_prefix: Orbit, live_state) -> np.ndarray:
    """Model of a client joining at ``live_state.step`` from the orbit it was sent."""
    t = live_state.step
    if orbit_prefix.T != t:
        raise ReplayError(f"orbit covers {orbit_prefix.T} steps but the federation is at step {t}")
    return replay(initial, orbit_prefix, digest=live_state.spec.digest())
