import json

import pytest

from feedsign.config import ConfigError, config_from_dict, parse_config

MINIMAL = {"rule": "feedsign", "model": "quadratic", "d": 100, "K": 5, "T": 1000, "eta": 1e-3, "mu": 1e-3, "run_seed": 1}


def rejected(path_prefix, **changes):
    raw = {**MINIMAL, **changes}
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert info.value.path.startswith(path_prefix), info.value.path


def test_minimal_config_is_valid():
    c = parse_config(json.dumps(MINIMAL).encode())
    assert (c.rule, c.d, c.K, c.T, c.B, c.eval_every) == ("feedsign", 100, 5, 1000, 16, 1)
    assert c.byzantine.count == 0 and c.byzantine_kind == "reverse"


def test_byzantine_count_must_be_below_k():
    rejected("byzantine.count", byzantine={"count": 5})


def test_epsilon_only_for_dp():
    rejected("epsilon", epsilon=1.0)
    rejected("epsilon", rule="dp_feedsign")
    assert config_from_dict({**MINIMAL, "rule": "dp_feedsign", "epsilon": 1.0}).epsilon == 1.0


def test_unknown_fields():
    rejected("colour", colour="red")
    rejected("byzantine.mode", byzantine={"count": 1, "mode": "x"})
    rejected("dataset.synthetic.size", model="logistic", dataset={"synthetic": {"size": 3}})


def test_constraints():
    rejected("T", T=-1)
    rejected("B", B=0)
    rejected("eta", eta=0)
    rejected("mu", mu=-1e-3)
    rejected("K", K=0)
    rejected("rule", rule="fedavg")
    rejected("eta", eta="fast")
    rejected("K", K=True)
    rejected("K", K=2.5)


def test_model_specific_fields():
    rejected("layers", layers=[2, 3, 2])
    rejected("layers", model="mlp")
    rejected("beta", beta=0.5)
    rejected("client_spread", model="logistic", client_spread=1.0)
    rejected("eigenvalues", eigenvalues=[-5.0])


def test_syntax_error():
    with pytest.raises(ConfigError) as info:
        parse_config(b"{not json")
    assert info.value.path == "$"


def test_round_trip_and_replace():
    c = config_from_dict({**MINIMAL, "model": "logistic", "d": 3, "dataset": {"synthetic": {"n": 50}}})
    assert config_from_dict(c.to_dict()) == c
    assert c.replace(T=7).T == 7


def test_random_attackers_default_for_zo():
    c = config_from_dict({**MINIMAL, "rule": "zo_fedsgd", "byzantine": {"count": 1}})
    assert c.byzantine_kind == "random"
