"""Central finite-difference gradient checks against the tape."""
import numpy as np

from . import autograd as ag


def numeric_grad(fn, tensor, h=1e-5):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``tensor``."""
    tensor.value = np.ascontiguousarray(tensor.value)
    grad = np.zeros_like(tensor.value)
    flat = tensor.value.reshape(-1)
    with ag.no_grad():
        for n in range(flat.size):
            old = flat[n]
            flat[n] = old + h
            up = fn().item()
            flat[n] = old - h
            down = fn().item()
            flat[n] = old
            grad.reshape(-1)[n] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(fn, tensors, h=1e-5, floor=1e-6):
    """Max elementwise relative error between tape and finite differences.

    Returns ``{tensor name or position: max error}``.
    """
    ag.get_tape().clear()
    for t in tensors:
        t.grad = None
    loss = fn()
    ag.backward(loss)
    out = {}
    for k, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.value)
        err = relative_error(analytic, numeric_grad(fn, t, h), floor)
        out[t.name or k] = float(err.max()) if err.size else 0.0
    for t in tensors:
        t.grad = None
    return out
