"""Central finite-difference checks against tape gradients (float64)."""
import numpy as np

from tmaflow import autodiff as ad


def rel_err(a, n, floor=1e-6):
    return abs(a - n) / max(abs(a), abs(n), floor)


def analytic_grads(fn, tensors):
    with ad.Tape() as tape:
        loss = fn(*tensors)
    tape.backward(loss)
    return [t.grad.copy() for t in tensors]


def check(fn, arrays, samples=10, eps=1e-6, seed=0, grad_of=None):
    """Largest relative error over ``samples`` random coordinates per input.

    ``fn`` maps Tensors to a scalar Tensor.  ``grad_of`` selects which inputs
    are differentiated (all by default).
    """
    rng = np.random.default_rng(seed)
    with ad.replay64():
        tensors = [ad.Tensor(np.asarray(a, dtype=np.float64)) for a in arrays]
        which = range(len(tensors)) if grad_of is None else grad_of
        for i in which:
            tensors[i].requires_grad = True
        grads = analytic_grads(fn, tensors)
        worst = 0.0
        for i in which:
            t = tensors[i]
            flat = t.data.reshape(-1)
            for j in rng.choice(flat.size, size=min(samples, flat.size), replace=False):
                old = flat[j]
                flat[j] = old + eps
                up = float(fn(*tensors).data)
                flat[j] = old - eps
                down = float(fn(*tensors).data)
                flat[j] = old
                num = (up - down) / (2 * eps)
                worst = max(worst, rel_err(float(grads[i].reshape(-1)[j]), num))
    return worst


def weighted_sum(out, seed=1):
    """Scalar probe ``sum(out * R)`` with a fixed random ``R``."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.sum(ad.mul(out, ad.Tensor(r)))
