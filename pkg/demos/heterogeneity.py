"""Fitted error floor as client optima spread apart.

ZO-FedSGD's floor starts near zero and climbs with the spread.  FeedSign's
starts higher, from the fixed sign step, and also climbs: the majority vote
follows the median client, which is pulled off the global optimum.
"""

from feedsign import config_from_dict, run_training
from feedsign.analysis import fit_error_floor

print("spread      zo_fedsgd       feedsign")
for spread in (0.0, 0.02, 0.08, 0.3):
    floors = []
    for rule in ("zo_fedsgd", "feedsign"):
        cfg = config_from_dict({"rule": rule, "model": "quadratic", "d": 50, "K": 5, "T": 6000, "eta": 1e-3,
                                "run_seed": 7, "init_scale": 0.1, "eval_every": 50, "client_spread": spread})
        floors.append(fit_error_floor(run_training(cfg).history, 0.0).floor)
    print(f"{spread:<8}{floors[0]:13.3e}{floors[1]:15.3e}")
