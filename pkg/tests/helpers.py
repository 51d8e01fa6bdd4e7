"""Shared test oracles, kept independent of the library's backward code."""

import numpy as np

from sketchembed.autograd import Tensor

FD_STEP = 1e-3


def finite_difference_grad(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar fn w.r.t. every entry of x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1.0) -> float:
    """Max |a-b| normalized by the largest magnitude in play (>= floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(floor, float(np.abs(a).max(initial=0.0)),
                float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom


def check_gradients(build_loss, leaves, h: float = FD_STEP, tol: float = 1e-3):
    """Assert autodiff gradients match central differences for every leaf.

    ``build_loss`` must construct the loss afresh from the leaves' current
    ``data`` each call (the finite-difference probe mutates it in place).
    ``leaves`` is a list of Tensors with requires_grad=True.
    """
    loss = build_loss()
    for leaf in leaves:
        leaf.grad = None
    loss.backward()
    for leaf in leaves:
        fd = finite_difference_grad(lambda: build_loss().item(), leaf.data, h=h)
        assert leaf.grad is not None, f"no gradient reached {leaf!r}"
        err = rel_err(leaf.grad, fd)
        assert err <= tol, f"gradient mismatch on {leaf!r}: rel err {err:.3e}"


def make_tensor(rng, shape, dtype=np.float64, scale=1.0) -> Tensor:
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype),
                  requires_grad=True, dtype=dtype)
