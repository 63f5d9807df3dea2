"""Deterministic simulator of federated zeroth-order fine-tuning with
sign-vote aggregation."""

from .aggregation import FEDSGD, FEEDSIGN, ZO_FEDSGD, AggregationRule, RuleKind, comm_cost, dp_feedsign
from .config import ConfigError, ExperimentConfig, config_from_dict, parse_config
from .federation import run_round, run_training, setup
from .models import Dataset, LogisticSpec, MLPSpec, QuadraticSpec
from .orbit import Orbit, catch_up, replay
from .prng import DirectionStream, derive_seed, make_stream, perturb_in_place
from .zo import spsa_projection

__version__ = "0.1.0"

__all__ = [
    "AggregationRule",
    "ConfigError",
    "Dataset",
    "DirectionStream",
    "ExperimentConfig",
    "FEDSGD",
    "FEEDSIGN",
    "LogisticSpec",
    "MLPSpec",
    "Orbit",
    "QuadraticSpec",
    "RuleKind",
    "ZO_FEDSGD",
    "catch_up",
    "comm_cost",
    "config_from_dict",
    "derive_seed",
    "dp_feedsign",
    "make_stream",
    "parse_config",
    "perturb_in_place",
    "replay",
    "run_round",
    "run_training",
    "setup",
    "spsa_projection",
]
