"""Regenerate the golden files.  Run only after an intentional format change:

    python tests/regen_golden.py
"""

import json
from pathlib import Path

import numpy as np

from feedsign import cli, orbit
from feedsign.config import config_from_dict
from feedsign.federation import run_training
from feedsign.prng import make_stream

HERE = Path(__file__).parent / "golden"
PRNG_SEEDS = (0, 1, 2**63)

ORBIT_CONFIGS = {
    "feedsign": {"rule": "feedsign", "model": "quadratic", "d": 6, "K": 3, "T": 3, "eta": 0.01, "run_seed": 11},
    "dp_feedsign": {"rule": "dp_feedsign", "model": "quadratic", "d": 6, "K": 3, "T": 3, "eta": 0.01,
                    "epsilon": 1.0, "run_seed": 11},
    "zo_fedsgd": {"rule": "zo_fedsgd", "model": "quadratic", "d": 6, "K": 3, "T": 3, "eta": 0.01, "run_seed": 11},
}

CLI_CONFIG = {
    "rule": "feedsign", "model": "logistic", "d": 3, "K": 2, "T": 3, "B": 4, "eta": 0.05, "run_seed": 5,
    "dataset": {"synthetic": {"n": 20, "separation": 2.0, "seed": 1}},
}


def main():
    HERE.mkdir(exist_ok=True)
    prng = {str(s): [format(v, ".17g") for v in make_stream(s).normals(64)] for s in PRNG_SEEDS}
    (HERE / "prng_normals.json").write_text(json.dumps(prng, indent=1) + "\n")
    for name, cfg in ORBIT_CONFIGS.items():
        result = run_training(config_from_dict(cfg))
        (HERE / f"{name}_3step.orbit").write_bytes(orbit.serialize(result.orbit))
    (HERE / "cli_config.json").write_text(json.dumps(CLI_CONFIG) + "\n")
    out = HERE / "cli_run"
    cli.train_one(config_from_dict(CLI_CONFIG), out)
    print("golden files written to", HERE)


if __name__ == "__main__":
    np.seterr(all="raise")
    main()
