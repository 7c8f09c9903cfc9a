"""Shared numerical oracles used across the test suite."""

import numpy as np

from tmcvae.autodiff import Tensor


def finite_difference(f, arrays, h=1e-6):
    """Central finite-difference gradients of scalar f w.r.t. each array.

    ``f`` takes numpy arrays and returns a python float; gradients are
    estimated element by element, independent of any autodiff machinery.
    """
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    """Max-norm relative discrepancy, guarded for tiny denominators."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / denom


def check_gradients(build, arrays, tol, h=1e-6):
    """Compare autodiff gradients of ``build`` against central differences.

    ``build`` maps a list of Tensors to a scalar Tensor. Returns the worst
    relative error over all inputs.
    """
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(leaves)
    loss.backward()

    def f(*arrs):
        consts = [Tensor(a) for a in arrs]
        return float(build(consts).data)

    fd = finite_difference(f, [a.copy() for a in arrays], h=h)
    worst = 0.0
    for leaf, g in zip(leaves, fd):
        assert leaf.grad is not None, "gradient was not populated"
        worst = max(worst, rel_error(leaf.grad, g))
    assert worst < tol, f"gradient mismatch: rel error {worst:.3e} >= {tol}"
    return worst
