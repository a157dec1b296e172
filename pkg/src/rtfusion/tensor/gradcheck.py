"""Central finite-difference gradient checking."""

import numpy as np

from rtfusion.tensor.core import Tensor, backward


def numerical_grad(fn, arrays, wrt, h=1e-3):
    """d fn / d arrays[wrt] by central differences; ``fn`` maps arrays to a float."""
    base = [a.copy() for a in arrays]
    target = base[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn(base)
        flat[i] = old - h
        fm = fn(base)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6, elementwise=False):
    """Max |a - n| relative to the gradient's scale, max(|a|, |n|) floored at ``floor``.

    The default scale is the whole tensor's largest magnitude. Per-entry scales
    (``elementwise=True``) amplify the O(h^2) truncation error of central
    differences on entries whose true gradient is near zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    if elementwise:
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        return float(np.max(np.abs(a - n) / denom))
    denom = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), floor)
    return float(np.max(np.abs(a - n)) / denom)


def gradcheck(fn, arrays, h=1e-3, floor=1e-6, wrt=None, elementwise=False):
    """Compare tape gradients of ``fn(*tensors)`` (a scalar Tensor) with finite differences.

    ``arrays`` are float64 numpy arrays. Returns the worst relative error per
    checked input, in input order.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    backward(loss)

    def scalar(arrs):
        return float(fn(*[Tensor(a) for a in arrs]).data)

    errors = []
    for i in wrt:
        num = numerical_grad(scalar, arrays, i, h=h)
        ana = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        errors.append(max_rel_error(ana, num, floor=floor, elementwise=elementwise))
    return errors
