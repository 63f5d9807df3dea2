"""Privacy of the noisy vote: worst ratio of outcome probabilities between
vote vectors that differ in one client, against e^epsilon."""

import math

from feedsign.aggregation import dp_plus_probability
from feedsign.analysis import dp_empirical_plus_rate, dp_max_ratio

for eps in (0.1, 1.0, 5.0):
    ratios = "  ".join(f"K={K}:{dp_max_ratio(K, eps):8.4f}" for K in range(2, 8))
    print(f"eps={eps:<4} e^eps={math.exp(eps):8.4f}  {ratios}")

print("\nP(+1) for K=5, eps=1, exact vs 20000 draws")
for n_plus in range(6):
    votes = [1] * n_plus + [-1] * (5 - n_plus)
    print(f"  {n_plus} plus votes: {dp_plus_probability(votes, 1.0):.4f}  {dp_empirical_plus_rate(votes, 1.0, 20000, n_plus):.4f}")
