"""Loop-based float64 reference implementations used as test oracles.

Deliberately naive: explicit loops, no shared code with the package.
"""

import math

import numpy as np


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    C, H, W = x.shape
    O, Cg, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    out = np.zeros((O, Ho, Wo))
    per_group = O // groups
    for o in range(O):
        g = o // per_group
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for c in range(Cg):
                    for u in range(k):
                        for v in range(k):
                            acc += w[o, c, u, v] * xp[g * Cg + c, i * stride + u, j * stride + v]
                out[o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def relu(x):
    return np.where(x > 0, x, 0.0)


def layer_norm(x, gamma, beta, eps=1e-5):
    out = np.empty_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape[:-1]):
        v = x[idx].astype(np.float64)
        mu = sum(v) / len(v)
        var = sum((t - mu) ** 2 for t in v) / len(v)
        out[idx] = [(t - mu) / math.sqrt(var + eps) * g + bb for t, g, bb in zip(v, gamma, beta)]
    return out


def softmax_rows(z):
    out = np.empty_like(z, dtype=np.float64)
    for idx in np.ndindex(z.shape[:-1]):
        row = [math.exp(t - max(z[idx])) for t in z[idx]]
        out[idx] = [r / sum(row) for r in row]
    return out
