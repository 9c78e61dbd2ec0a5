"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool
    n_checked: int = 0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.op_name}: max_rel={self.max_rel_error:.3e} "
            f"max_abs={self.max_abs_error:.3e} ({self.n_checked} coords)"
        )


EPS = np.finfo(np.float64).eps
ROUNDOFF_SLACK = 10.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def resolution_floor(f_value: float, h: float, tol: float) -> float:
    """Smallest gradient magnitude a central difference can resolve to relative ``tol``.

    Each evaluation of ``f`` carries roundoff of order ``eps * |f|``, so the
    difference quotient is uncertain by about ``eps * |f| / h``. Gradients
    below ``slack * eps * |f| / (h * tol)`` are compared in absolute terms
    against that uncertainty instead (exact zeros such as a key bias under
    softmax otherwise turn pure roundoff into huge relative errors).
    """
    return max(1e-8, ROUNDOFF_SLACK * EPS * max(abs(f_value), 1.0) / (h * tol))


def finite_diff_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    op_name: str = "f",
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    analytic: Sequence[np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of scalar ``f()`` against central differences.

    ``f`` closes over ``inputs`` and is re-evaluated after perturbing one
    coordinate at a time in place. ``max_coords`` caps the number of
    coordinates probed per input (sampled with ``rng``). Passing
    ``analytic`` skips backprop and checks the supplied arrays instead,
    which is how corrupted-gradient controls are built.
    """
    if analytic is None:
        for t in inputs:
            t.grad = None
        loss = f()
        backward(loss)
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng or np.random.default_rng(0)
    with no_grad():
        floor = resolution_floor(float(f().data), h, tol)

    max_rel = max_abs = 0.0
    count = 0
    with no_grad():
        for t, a in zip(inputs, analytic):
            t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            a_flat = np.asarray(a).reshape(-1)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                abs_err = abs(a_flat[i] - num)
                rel = float(relative_error(np.array(a_flat[i]), np.array(num), floor))
                max_abs = max(max_abs, abs_err)
                max_rel = max(max_rel, rel)
                count += 1
    return GradCheckReport(op_name, max_rel, max_abs, bool(max_rel < tol), count)
