"""FeedSign against ZO-FedSGD and FedSGD on one quadratic.

Prints the loss every 500 steps and what each client sent in total.
"""

from feedsign import config_from_dict, run_training

BASE = {"model": "quadratic", "d": 100, "K": 5, "T": 3000, "eta": 1e-3, "run_seed": 3,
        "init_scale": 0.3, "eval_every": 500, "eigenvalues": [9.0, 4.0]}

runs = {}
for rule, eta in (("fedsgd", 0.05), ("zo_fedsgd", 1e-3), ("feedsign", 1e-3)):
    runs[rule] = run_training(config_from_dict({**BASE, "rule": rule, "eta": eta}))

print("step   " + "".join(f"{r:>14}" for r in runs))
for i, h in enumerate(runs["feedsign"].history):
    print(f"{h.step + 1:<7}" + "".join(f"{runs[r].history[i].global_loss:14.5f}" for r in runs))

print()
for rule, res in runs.items():
    per_step = res.history[0].uplink_bits // BASE["K"]
    print(f"{rule:>11}: {per_step} bits per client per step, {per_step * BASE['T'] / 8:,.0f} bytes per client per run")
