"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    checked: int
    skipped: int = 0

    def __float__(self):
        return self.max_rel_error


class NonFiniteError(FloatingPointError):
    def __init__(self, where):
        super().__init__(f"non-finite value in {where}")
        self.where = where


def _rel(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(fn, inputs, eps=1e-3, samples=20, seed=0, exclude=None, kink_tol=1e-3):
    """Compare analytic and finite-difference gradients of ``fn``.

    ``fn`` maps the dict ``inputs`` (name -> float64 array) to a Tensor of any
    shape; the scalar checked is ``sum(out * r)`` for a fixed random ``r``.
    Up to ``samples`` coordinates per input are probed. ``exclude(name,
    index)`` may veto coordinates up front.

    A coordinate whose forward and backward one-sided slopes disagree by more
    than ``kink_tol`` (relative) has a ReLU kink or pooling tie inside the
    probe interval. It is re-probed once with ``eps / 100`` and skipped if
    still non-smooth; skipped coordinates are counted in the result.
    """
    rng = np.random.default_rng(seed)
    tensors = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in inputs.items()}
    out = fn(tensors)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("forward output")
    proj = rng.standard_normal(out.shape)
    out.backward(proj)

    def objective():
        fresh = {k: Tensor(t.data) for k, t in tensors.items()}
        o = fn(fresh).data
        if not np.all(np.isfinite(o)):
            raise NonFiniteError("perturbed forward output")
        return float((o * proj).sum())

    base = objective()
    worst, where, count, skipped = 0.0, "", 0, 0
    for name, t in tensors.items():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient of {name}")
        flat = t.data.reshape(-1)
        idx = rng.permutation(flat.size)
        probed = 0
        for i in idx:
            if probed >= samples:
                break
            if exclude is not None and exclude(name, np.unravel_index(i, t.shape)):
                continue
            num = None
            old = flat[i]
            for h in (eps, eps / 100):
                flat[i] = old + h
                fp = objective()
                flat[i] = old - h
                fm = objective()
                flat[i] = old
                up, down = (fp - base) / h, (base - fm) / h
                if abs(up - down) <= kink_tol * max(abs(up), abs(down)) + 1e-7:
                    num = (fp - fm) / (2 * h)
                    break
            if num is None:
                skipped += 1
                continue
            err = _rel(grad.reshape(-1)[i], num)
            probed += 1
            if err > worst:
                worst, where = err, f"{name}[{np.unravel_index(i, t.shape)}]"
        count += probed
    return GradCheckResult(worst, where, count, skipped)
