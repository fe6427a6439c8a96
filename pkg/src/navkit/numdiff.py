"""On-manifold numerical differentiation.

Jacobians are taken in the generalized sense: column i of the Jacobian of
``f`` at ``x`` is ``(f(x oplus h e_i) ominus f(x)) / h``, so the same code
differentiates maps between vector spaces, Lie groups and composites.

Three schemes are available: forward difference, central difference
(the default) and complex step. Complex step requires the target function
to be evaluable over complexified arithmetic, which callers assert by
marking the function with :func:`complex_capable`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolationError, UnsupportedSchemeError
from .states import ManifoldPoint, ominus, oplus, vector_state

__all__ = ["DiffMethod", "DiffScheme", "jacobian", "complex_capable"]


class DiffMethod(enum.Enum):
    FORWARD = "forward"
    CENTRAL = "central"
    COMPLEX_STEP = "complex_step"


_DEFAULT_STEPS = {
    DiffMethod.FORWARD: 1e-6,
    DiffMethod.CENTRAL: 1e-6,
    DiffMethod.COMPLEX_STEP: 1e-16,
}


@dataclass(frozen=True)
class DiffScheme:
    """A differentiation method plus an absolute step size."""

    method: DiffMethod = DiffMethod.CENTRAL
    step: float | None = None

    def __post_init__(self):
        if self.step is None:
            object.__setattr__(self, "step", _DEFAULT_STEPS[self.method])
        if self.step <= 0:
            raise ContractViolationError("differentiation step must be > 0")


DEFAULT_SCHEME = DiffScheme()


def complex_capable(func):
    """Mark a function as safe to evaluate with complexified arithmetic."""
    func.complex_step = True
    return func


def _as_point(x) -> ManifoldPoint:
    if isinstance(x, ManifoldPoint):
        return x
    return vector_state(np.asarray(x, dtype=float))


def _diff(a, b):
    if isinstance(a, ManifoldPoint):
        return ominus(a, b)
    return np.atleast_1d(np.asarray(a) - np.asarray(b))


def jacobian(f, x, scheme: DiffScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Numerical Jacobian of ``f`` at ``x``.

    ``x`` may be a ManifoldPoint or a plain vector; ``f`` may return either
    as well. The result is (output dof) x (input dof).
    """
    x = _as_point(x)
    n = x.dof
    h = scheme.step

    if scheme.method is DiffMethod.COMPLEX_STEP:
        if not getattr(f, "complex_step", False):
            raise UnsupportedSchemeError(
                "complex step requested for a function not marked complex-capable; "
                "decorate it with navkit.numdiff.complex_capable if it supports "
                "complexified arithmetic"
            )
        f0 = f(x)
        cols = []
        for i in range(n):
            e = np.zeros(n, dtype=complex)
            e[i] = 1j * h
            cols.append(np.imag(_diff(f(oplus(x, e)), f0)) / h)
        return np.column_stack(cols)

    if scheme.method is DiffMethod.FORWARD:
        f0 = f(x)
        cols = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            cols.append(_diff(f(oplus(x, e)), f0) / h)
        return np.column_stack(cols)

    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h / 2.0
        cols.append(_diff(f(oplus(x, e)), f(oplus(x, -e))) / h)
    return np.column_stack(cols)
