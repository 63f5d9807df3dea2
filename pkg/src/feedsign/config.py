"""JSON experiment configuration.

Fields (defaults in brackets):

    rule            "fedsgd" | "zo_fedsgd" | "feedsign" | "dp_feedsign"   (required)
    model           "quadratic" | "logistic" | "mlp"                      (required)
    d               quadratic dimension or logistic feature count        [10]
    layers          MLP layer sizes, input first, classes last           (mlp only, required)
    eigenvalues     quadratic: extra eigenvalues on top of the base      [[]]
    base_eigenvalue quadratic: eigenvalue of the remaining directions    [1.0]
    client_spread   quadratic: std of per-client optimum shifts          [0.0]
    init_scale      std of the initial parameter noise                   [1.0 quadratic, 0.0 logistic, 0.5 mlp]
    dataset         {"path": "file.csv"} or
                    {"synthetic": {"n": 1000, "separation": 2.0, "seed": 0}}
                                                                         [synthetic; unused by the quadratic]
    K               number of clients                                    [5]
    T               number of steps                                      [1000]
    B               batch size                                           [16]
    eta             learning rate                                        (required)
    mu              perturbation scale                                   [1e-3]
    beta            Dirichlet concentration; null means an iid split     [null]
    byzantine       {"count": 0, "kind": "reverse" | "random"}           [count 0; kind "random" for
                                                                          zo_fedsgd, "reverse" otherwise]
    het_noise       multiply projections by 1 + N(0, 1)                  [false]
    epsilon         privacy budget, dp_feedsign only                     (required for dp_feedsign)
    dp_seed         seed of the private-vote noise stream                [derived from run_seed]
    run_seed        64-bit seed of the whole run                         (required)
    eval_every      evaluate the global loss every this many steps       [1]
    out_dir         where ``train`` writes its files                     [null: use --out-dir]
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

from .aggregation import AggregationRule, RuleKind

MODELS = ("quadratic", "logistic", "mlp")
BYZANTINE_KINDS = ("reverse", "random")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ByzantineConfig:
    count: int = 0
    kind: str | None = None


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 1000
    separation: float = 2.0
    seed: int = 0


@dataclass(frozen=True)
class DatasetConfig:
    path: str | None = None
    synthetic: SyntheticConfig | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    rule: str
    model: str
    eta: float
    run_seed: int
    d: int = 10
    layers: tuple[int, ...] | None = None
    eigenvalues: tuple[float, ...] = ()
    base_eigenvalue: float = 1.0
    client_spread: float = 0.0
    init_scale: float | None = None
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    K: int = 5
    T: int = 1000
    B: int = 16
    mu: float = 1e-3
    beta: float | None = None
    byzantine: ByzantineConfig = field(default_factory=ByzantineConfig)
    het_noise: bool = False
    epsilon: float | None = None
    dp_seed: int | None = None
    eval_every: int = 1
    out_dir: str | None = None

    @property
    def aggregation_rule(self) -> AggregationRule:
        return AggregationRule(RuleKind(self.rule), self.epsilon)

    @property
    def byzantine_kind(self) -> str:
        if self.byzantine.kind is not None:
            return self.byzantine.kind
        return "random" if self.rule == "zo_fedsgd" else "reverse"

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["layers"] = list(self.layers) if self.layers is not None else None
        out["eigenvalues"] = list(self.eigenvalues)
        ds = {k: v for k, v in out["dataset"].items() if v is not None}
        out["dataset"] = ds or None
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        merged = self.to_dict()
        merged.update(changes)
        return config_from_dict(merged)


_TOP_FIELDS = {f for f in ExperimentConfig.__dataclass_fields__}


def _expect(value, kinds, path):
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(path, f"expected {_kind_names(kinds)}, got a boolean")
    if not isinstance(value, kinds):
        raise ConfigError(path, f"expected {_kind_names(kinds)}, got {type(value).__name__}")
    return value


def _kind_names(kinds):
    return " or ".join(k.__name__ for k in kinds)


def _number(value, path) -> float:
    v = float(_expect(value, (int, float), path))
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    return v


def _integer(value, path) -> int:
    return int(_expect(value, (int,), path))


def _no_extra(obj: dict, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}{key}", "unknown field")


def _dataset(raw, path) -> DatasetConfig:
    if raw is None:
        return DatasetConfig()
    _expect(raw, (dict,), path)
    _no_extra(raw, {"path", "synthetic"}, path + ".")
    if ("path" in raw) == ("synthetic" in raw):
        raise ConfigError(path, "give exactly one of 'path' or 'synthetic'")
    if "path" in raw:
        return DatasetConfig(path=_expect(raw["path"], (str,), path + ".path"))
    syn = _expect(raw["synthetic"], (dict,), path + ".synthetic")
    _no_extra(syn, {"n", "separation", "seed"}, path + ".synthetic.")
    out = SyntheticConfig(
        n=_integer(syn.get("n", 1000), path + ".synthetic.n"),
        separation=_number(syn.get("separation", 2.0), path + ".synthetic.separation"),
        seed=_integer(syn.get("seed", 0), path + ".synthetic.seed"),
    )
    if out.n < 1:
        raise ConfigError(path + ".synthetic.n", "must be >= 1")
    return DatasetConfig(synthetic=out)


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    _expect(raw, (dict,), "$")
    _no_extra(raw, _TOP_FIELDS, "")
    for req in ("rule", "model", "eta", "run_seed"):
        if raw.get(req) is None:
            raise ConfigError(req, "required field missing")

    rule = _expect(raw["rule"], (str,), "rule")
    if rule not in {k.value for k in RuleKind}:
        raise ConfigError("rule", f"unknown rule {rule!r}")
    model = _expect(raw["model"], (str,), "model")
    if model not in MODELS:
        raise ConfigError("model", f"unknown model {model!r}")

    kw: dict[str, Any] = {"rule": rule, "model": model}
    kw["eta"] = _number(raw["eta"], "eta")
    kw["run_seed"] = _integer(raw["run_seed"], "run_seed")
    if not 0 <= kw["run_seed"] < 2**64:
        raise ConfigError("run_seed", "must fit in 64 unsigned bits")
    for name in ("d", "K", "T", "B", "eval_every"):
        if raw.get(name) is not None:
            kw[name] = _integer(raw[name], name)
    for name in ("base_eigenvalue", "client_spread", "mu"):
        if raw.get(name) is not None:
            kw[name] = _number(raw[name], name)
    for name in ("init_scale", "beta", "epsilon"):
        if raw.get(name) is not None:
            kw[name] = _number(raw[name], name)
    if raw.get("dp_seed") is not None:
        kw["dp_seed"] = _integer(raw["dp_seed"], "dp_seed")
    if raw.get("het_noise") is not None:
        kw["het_noise"] = _expect(raw["het_noise"], (bool,), "het_noise")
    if raw.get("out_dir") is not None:
        kw["out_dir"] = _expect(raw["out_dir"], (str,), "out_dir")
    if raw.get("layers") is not None:
        layers = _expect(raw["layers"], (list,), "layers")
        kw["layers"] = tuple(_integer(v, f"layers[{i}]") for i, v in enumerate(layers))
    if raw.get("eigenvalues") is not None:
        vals = _expect(raw["eigenvalues"], (list,), "eigenvalues")
        kw["eigenvalues"] = tuple(_number(v, f"eigenvalues[{i}]") for i, v in enumerate(vals))
    kw["dataset"] = _dataset(raw.get("dataset"), "dataset")
    byz = raw.get("byzantine")
    if byz is not None:
        _expect(byz, (dict,), "byzantine")
        _no_extra(byz, {"count", "kind"}, "byzantine.")
        kind = byz.get("kind")
        if kind is not None and kind not in BYZANTINE_KINDS:
            raise ConfigError("byzantine.kind", f"must be one of {BYZANTINE_KINDS}")
        kw["byzantine"] = ByzantineConfig(_integer(byz.get("count", 0), "byzantine.count"), kind)

    cfg = ExperimentConfig(**kw)
    _validate(cfg)
    return cfg


def _validate(c: ExperimentConfig) -> None:
    if c.K < 1:
        raise ConfigError("K", "must be >= 1")
    if c.T < 0:
        raise ConfigError("T", "must be >= 0")
    if c.B < 1:
        raise ConfigError("B", "must be >= 1")
    if not c.eta > 0:
        raise ConfigError("eta", "must be > 0")
    if not c.mu > 0:
        raise ConfigError("mu", "must be > 0")
    if c.eval_every < 1:
        raise ConfigError("eval_every", "must be >= 1")
    if c.d < 1:
        raise ConfigError("d", "must be >= 1")
    if not 0 <= c.byzantine.count < c.K:
        raise ConfigError("byzantine.count", f"must be in [0, K) = [0, {c.K})")
    if c.beta is not None and not c.beta > 0:
        raise ConfigError("beta", "must be > 0")
    if c.rule == "dp_feedsign":
        if c.epsilon is None:
            raise ConfigError("epsilon", "required for dp_feedsign")
        if not c.epsilon > 0:
            raise ConfigError("epsilon", "must be > 0")
    elif c.epsilon is not None:
        raise ConfigError("epsilon", f"only valid with rule 'dp_feedsign', not {c.rule!r}")
    if c.dp_seed is not None and c.rule != "dp_feedsign":
        raise ConfigError("dp_seed", "only valid with rule 'dp_feedsign'")
    if c.model == "mlp":
        if c.layers is None or len(c.layers) < 2 or min(c.layers) < 1 or c.layers[-1] < 2:
            raise ConfigError("layers", "mlp needs >= 2 positive layer sizes with >= 2 output classes")
    elif c.layers is not None:
        raise ConfigError("layers", "only valid for model 'mlp'")
    if c.model == "quadratic":
        if len(c.eigenvalues) > c.d:
            raise ConfigError("eigenvalues", "more eigenvalues than dimensions")
        if c.base_eigenvalue < 0 or any(c.base_eigenvalue + v < 0 for v in c.eigenvalues):
            raise ConfigError("eigenvalues", "Hessian must be positive semidefinite")
        if c.client_spread < 0:
            raise ConfigError("client_spread", "must be >= 0")
        if c.beta is not None:
            raise ConfigError("beta", "Dirichlet splits need a classification model")
    else:
        if c.eigenvalues or c.base_eigenvalue != 1.0:
            raise ConfigError("eigenvalues", "only valid for model 'quadratic'")
        if c.client_spread != 0.0:
            raise ConfigError("client_spread", "only valid for model 'quadratic'")


def parse_config(text: bytes | str) -> ExperimentConfig:
    """Parse and validate a JSON experiment config."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return config_from_dict(raw)
