"""Second implementations used as test oracles.  Plain Python, no numpy in
the arithmetic, written independently of the package code."""

import math

MASK = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix_finalize(x):
    x &= MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK
    return x ^ (x >> 31)


def stream_word(key, i):
    return splitmix_finalize(key + (i + 1) * GOLDEN_GAMMA)


def unit(word):
    return ((word >> 11) + 1) / 2.0**53


def box_muller_normals(seed, n, tag=0x6E6F726D616C2D7A):
    """First n normals of a stream, via libm log/cos/sin."""
    key = splitmix_finalize(seed ^ tag)
    out = []
    j = 0
    while len(out) < n:
        u1 = unit(stream_word(key, 2 * j))
        u2 = unit(stream_word(key, 2 * j + 1))
        r = math.sqrt(-2.0 * math.log(u1))
        out.append(r * math.cos(2.0 * math.pi * u2))
        out.append(r * math.sin(2.0 * math.pi * u2))
        j += 1
    return out[:n]


def mlp_forward_loss(layers, params, x, label):
    """Cross-entropy of one sample through a tanh MLP, loops only.
    Layout per layer: W (out x in, row-major) then b."""
    pos = 0
    h = list(x)
    n_layers = len(layers) - 1
    for li in range(n_layers):
        n_in, n_out = layers[li], layers[li + 1]
        w = params[pos : pos + n_in * n_out]
        pos += n_in * n_out
        b = params[pos : pos + n_out]
        pos += n_out
        z = []
        for o in range(n_out):
            acc = b[o]
            for i in range(n_in):
                acc += w[o * n_in + i] * h[i]
            z.append(acc)
        h = [math.tanh(v) for v in z] if li < n_layers - 1 else z
    top = max(h)
    lse = top + math.log(sum(math.exp(v - top) for v in h))
    return lse - h[label]


def dp_plus_probability(votes, eps):
    """P(+1) straight from the exponential-mechanism definition."""
    q_plus = sum(0.5 + v for v in votes)
    q_minus = sum(0.5 - v for v in votes)
    a = math.exp(eps * q_plus / 4.0)
    b = math.exp(eps * q_minus / 4.0)
    return a / (a + b)


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))
