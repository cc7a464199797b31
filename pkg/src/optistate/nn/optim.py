"""Adam with optional decoupled weight decay (AdamW) over a dict of arrays."""
import numpy as np


class Adam:
    """Adam / AdamW on a ``{name: array}`` parameter dict, updated in place.

    With ``decoupled=True`` the decay shrinks weights directly (AdamW) and is
    applied to matrices only; otherwise it is added to the gradient as an L2
    term on every parameter, as in classic Adam.
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, decoupled=False):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.decoupled = decoupled
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            p, g = params[k], grads[k]
            if self.wd and not self.decoupled:
                g = g + self.wd * p
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.wd and self.decoupled and p.ndim >= 2:
                p *= 1.0 - self.lr * self.wd
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        out = {"t": np.array([float(self.t)])}
        for k in self.m:
            out[f"m:{k}"] = self.m[k]
            out[f"v:{k}"] = self.v[k]
        return out


def lr_at(base, step, total, schedule="constant"):
    """Learning rate for 0-based ``step`` of ``total``: constant or cosine to zero."""
    if schedule == "constant" or total <= 0:
        return base
    if schedule == "cosine":
        return 0.5 * base * (1.0 + np.cos(np.pi * min(step, total) / total))
    raise ValueError(f"unknown schedule {schedule!r}")
