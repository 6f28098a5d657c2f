"""Finite-difference gradient oracle shared by the test modules."""

import numpy as np

from lfpfe import autodiff as ad


def numeric_grad(f, arrays, k, h=1e-3):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[k]``, evaluated in float64."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    x = base[k]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(*base)
        x[i] = old - h
        fm = f(*base)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def check_op(op, arrays, rng, dtype=np.float32, h=1e-3):
    """Relative error of ``op``'s analytic gradients (in ``dtype``) against an f64 FD oracle.

    The scalar probed is ``sum(op(*xs) * R)`` for a fixed random ``R``.
    """
    out = op(*[ad.Tensor(np.asarray(a, np.float64)) for a in arrays])
    R = rng.standard_normal(out.shape)

    def f(*xs):
        return float((op(*[ad.Tensor(x) for x in xs]).data * R).sum())

    ts = [ad.Tensor(np.asarray(a, dtype), requires_grad=True) for a in arrays]
    loss = ad.sum(ad.mul(op(*ts), ad.Tensor(R.astype(dtype))))
    loss.backward()
    return max(rel_err(t.grad, numeric_grad(f, arrays, k, h)) for k, t in enumerate(ts))
