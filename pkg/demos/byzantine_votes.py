"""How often a transmitted vote has the wrong sign when some clients reverse
their own estimate.  Batches of one on a quadratic whose per-sample optimum
shifts lie on one line make the honest error rate p_e exact."""

import math

import numpy as np

from feedsign.analysis import byzantine_vote_errors, predicted_reversal_probability, reversed_estimate_probability
from feedsign.models import Dataset, QuadraticSpec
from feedsign.prng import make_stream

n, d, K = 1000, 4, 5
u = np.ones(d) / math.sqrt(d)
s = make_stream(77).normals(n)
s = np.sort(s - s.mean())
spec = QuadraticSpec(d, (), 1.0, data_shift=True)
data = Dataset(s[:, None] * u, np.zeros(n))

print(" p_e  p_b  measured  p_e+p_b-p_e*p_b  p_e+p_b-2*p_e*p_b")
for p_e in (0.1, 0.3):
    m_wrong = round(p_e * n)
    w = 0.5 * (s[n - m_wrong - 1] + s[n - m_wrong]) * u
    for n_byz in range(3):
        m = byzantine_vote_errors(spec, w, 11, data, B=1, K=K, n_byzantine=n_byz, rounds=2000, sampler=n_byz + 1)
        print(f"{p_e:4} {m.p_b:4}  {m.wrong_fraction:8.4f}  {predicted_reversal_probability(p_e, m.p_b):15.4f}"
              f"  {reversed_estimate_probability(p_e, m.p_b):17.4f}")
