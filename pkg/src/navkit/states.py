"""The universal state abstraction: generalized plus/minus with a selectable
perturbation convention.

A state is a vector, a matrix Lie group element, or an ordered composite of
other states (a product manifold). Perturbations live in R^dof and are
applied with :func:`oplus`:

* vector:          ``x + dx``
* group, right:    ``X o Exp(dx)``
* group, left:     ``Exp(dx) o X``
* composite:       elementwise over the children's slices of ``dx``

:func:`ominus` is the matching inverse. The perturbation side is a property
of the state value, not of the estimator, so one filter implementation
serves both conventions.

All values are immutable; every operation returns a fresh object.
Stamps and state ids pass through unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Hashable, Optional, Sequence, Union

import numpy as np

from . import liegroups as lg
from .exceptions import ContractViolationError

__all__ = [
    "Side",
    "ManifoldPoint",
    "GaussianBelief",
    "BeliefDiagnostics",
    "vector_state",
    "group_state",
    "composite_state",
    "oplus",
    "ominus",
    "ominus_many",
    "oplus_jacobian",
    "ominus_jacobians",
    "belief_check",
    "point_to_dict",
    "point_from_dict",
    "belief_to_dict",
    "belief_from_dict",
]


class Side:
    RIGHT = "right"
    LEFT = "left"


StateValue = Union[np.ndarray, lg.GroupElement, tuple]


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """A value on a manifold plus bookkeeping (stamp, id, perturbation side).

    ``value`` is a 1-D array (vector state), a GroupElement, or a tuple of
    child ManifoldPoints (composite). ``side`` is ignored for vectors;
    composite children keep their own sides.
    """

    value: StateValue
    side: str = Side.RIGHT
    stamp: Optional[float] = None
    state_id: Optional[Hashable] = None

    def __post_init__(self):
        if self.side not in (Side.RIGHT, Side.LEFT):
            raise ContractViolationError(f"unknown perturbation side {self.side!r}")
        v = self.value
        if isinstance(v, lg.GroupElement):
            return
        if isinstance(v, (tuple, list)):
            children = tuple(v)
            if not children or not all(isinstance(c, ManifoldPoint) for c in children):
                raise ContractViolationError("composite needs >= 1 ManifoldPoint child")
            object.__setattr__(self, "value", children)
            return
        arr = np.atleast_1d(np.array(v))
        if arr.ndim != 1:
            raise ContractViolationError(f"vector state must be 1-D, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "value", arr)

    @property
    def dof(self) -> int:
        v = self.value
        if isinstance(v, lg.GroupElement):
            return v.kind.dof
        if isinstance(v, tuple):
            return sum(c.dof for c in v)
        return v.shape[0]

    @property
    def is_group(self) -> bool:
        return isinstance(self.value, lg.GroupElement)

    @property
    def is_composite(self) -> bool:
        return isinstance(self.value, tuple)

    @property
    def children(self) -> tuple["ManifoldPoint", ...]:
        if not self.is_composite:
            raise ContractViolationError("not a composite state")
        return self.value

    def child_slices(self) -> list[slice]:
        """dof slices of the children, in declaration order."""
        out, start = [], 0
        for c in self.children:
            out.append(slice(start, start + c.dof))
            start += c.dof
        return out

    def child(self, state_id) -> tuple["ManifoldPoint", slice]:
        """Locate a child by id; returns (child, its dof slice)."""
        for c, s in zip(self.children, self.child_slices()):
            if c.state_id == state_id:
                return c, s
        raise ContractViolationError(f"no child with state_id {state_id!r}")

    def with_stamp(self, stamp: Optional[float]) -> "ManifoldPoint":
        return replace(self, stamp=stamp)

    def with_state_id(self, state_id) -> "ManifoldPoint":
        return replace(self, state_id=state_id)


def vector_state(values, stamp=None, state_id=None) -> ManifoldPoint:
    return ManifoldPoint(np.asarray(values, dtype=float), Side.RIGHT, stamp, state_id)


def group_state(element: lg.GroupElement, side: str = Side.RIGHT, stamp=None,
                state_id=None) -> ManifoldPoint:
    return ManifoldPoint(element, side, stamp, state_id)


def composite_state(children: Sequence[ManifoldPoint], stamp=None,
                    state_id=None) -> ManifoldPoint:
    return ManifoldPoint(tuple(children), Side.RIGHT, stamp, state_id)


def _same_structure(x: ManifoldPoint, y: ManifoldPoint) -> bool:
    if x.is_group != y.is_group or x.is_composite != y.is_composite:
        return False
    if x.is_group:
        return x.value.kind is y.value.kind and x.side == y.side
    if x.is_composite:
        return len(x.children) == len(y.children) and all(
            _same_structure(a, b) for a, b in zip(x.children, y.children)
        )
    return x.dof == y.dof


def oplus(x: ManifoldPoint, dx: np.ndarray) -> ManifoldPoint:
    """Generalized addition; see the module docstring for the conventions."""
    dx = np.atleast_1d(np.asarray(dx))
    if dx.shape != (x.dof,):
        raise ContractViolationError(f"oplus needs a {x.dof}-vector, got shape {dx.shape}")
    if x.is_group:
        elem = x.value
        step = lg.exp_map(lg._tangent(elem.kind, dx))
        new = lg.compose(elem, step) if x.side == Side.RIGHT else lg.compose(step, elem)
        return replace(x, value=new)
    if x.is_composite:
        parts = tuple(
            oplus(c, dx[s]) for c, s in zip(x.children, x.child_slices())
        )
        return replace(x, value=parts)
    return replace(x, value=x.value + dx)


def ominus(x: ManifoldPoint, y: ManifoldPoint) -> np.ndarray:
    """Generalized subtraction: the dx with y oplus dx == x (within the
    principal Log branch)."""
    if not _same_structure(x, y):
        raise ContractViolationError("ominus requires matching structure and sides")
    if x.is_group:
        if x.side == Side.RIGHT:
            rel = lg.compose(lg.inverse(y.value), x.value)
        else:
            rel = lg.compose(x.value, lg.inverse(y.value))
        return lg.log_map(rel).coords
    if x.is_composite:
        return np.concatenate([ominus(a, b) for a, b in zip(x.children, y.children)])
    return x.value - y.value


def ominus_many(points: Sequence[ManifoldPoint], y: ManifoldPoint) -> np.ndarray:
    """Stacked (len(points), dof) array of point (-) y; shares the inverse
    of y across points, which matters in sigma-point loops."""
    if not points:
        return np.zeros((0, y.dof))
    if y.is_group:
        kind = y.value.kind
        if y.side == Side.RIGHT:
            y_inv = lg.inverse(y.value).matrix
            return np.array([
                lg.log_map(lg._element(kind, y_inv @ p.value.matrix)).coords
                for p in points
            ])
        y_inv = lg.inverse(y.value).matrix
        return np.array([
            lg.log_map(lg._element(kind, p.value.matrix @ y_inv)).coords
            for p in points
        ])
    return np.array([ominus(p, y) for p in points])


def oplus_jacobian(x: ManifoldPoint, dx: np.ndarray) -> np.ndarray:
    """Jacobian of (x oplus dx) with respect to dx, evaluated at dx.

    For group states this is the side-matched group Jacobian of dx
    (right Jacobian under the right convention, left under left); identity
    for vectors; block diagonal for composites.
    """
    dx = np.asarray(dx)
    if dx.shape != (x.dof,):
        raise ContractViolationError(f"expected a {x.dof}-vector, got shape {dx.shape}")
    if x.is_group:
        return lg.group_jacobian(lg.TangentVector(x.value.kind, dx), x.side)
    if x.is_composite:
        out = np.zeros((x.dof, x.dof))
        for c, s in zip(x.children, x.child_slices()):
            out[s, s] = oplus_jacobian(c, dx[s])
        return out
    return np.eye(x.dof)


def ominus_jacobians(x: ManifoldPoint, y: ManifoldPoint) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of e = x ominus y with respect to perturbations of x and y.

    Returns (de/ddx, de/ddy) where x -> x oplus ddx and y -> y oplus ddy.
    """
    e = ominus(x, y)
    if x.is_group:
        kind, side = x.value.kind, x.side
        if side == Side.RIGHT:
            Jx = np.linalg.inv(lg.group_jacobian(lg.TangentVector(kind, e), "right"))
            Jy = -np.linalg.inv(lg.group_jacobian(lg.TangentVector(kind, e), "left"))
        else:
            Jx = np.linalg.inv(lg.group_jacobian(lg.TangentVector(kind, e), "left"))
            Jy = -np.linalg.inv(lg.group_jacobian(lg.TangentVector(kind, e), "right"))
        return Jx, Jy
    if x.is_composite:
        Jx = np.zeros((x.dof, x.dof))
        Jy = np.zeros((x.dof, x.dof))
        for cx, cy, s in zip(x.children, y.children, x.child_slices()):
            bx, by = ominus_jacobians(cx, cy)
            Jx[s, s] = bx
            Jy[s, s] = by
        return Jx, Jy
    n = x.dof
    return np.eye(n), -np.eye(n)


# ---------------------------------------------------------------------------
# Gaussian beliefs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """A mean point plus a dof x dof covariance in the mean's tangent space
    (the tangent space implied by the mean's perturbation convention).

    The covariance is symmetrized on construction.
    """

    mean: ManifoldPoint
    covariance: np.ndarray

    def __post_init__(self):
        P = np.array(self.covariance, dtype=float)
        n = self.mean.dof
        if P.shape != (n, n):
            raise ContractViolationError(
                f"covariance must be {n}x{n} for a dof-{n} state, got {P.shape}"
            )
        P = (P + P.T) / 2.0
        P.flags.writeable = False
        object.__setattr__(self, "covariance", P)

    @property
    def dof(self) -> int:
        return self.mean.dof


@dataclass(frozen=True)
class BeliefDiagnostics:
    symmetry_defect: float
    min_eigenvalue: float
    dof_consistent: bool

    @property
    def ok(self) -> bool:
        return self.dof_consistent and self.min_eigenvalue >= -1e-10


def belief_check(belief: GaussianBelief, raw_covariance=None) -> BeliefDiagnostics:
    """Diagnostic report on a belief: symmetry defect (of the raw input if
    given, else of the stored matrix), smallest eigenvalue, dof consistency.
    Reporting only; never raises."""
    P = belief.covariance if raw_covariance is None else np.asarray(raw_covariance)
    defect = float(np.max(np.abs(P - P.T))) if P.size else 0.0
    sym = (P + P.T) / 2.0
    min_eig = float(np.min(np.linalg.eigvalsh(sym))) if P.size else 0.0
    return BeliefDiagnostics(
        symmetry_defect=defect,
        min_eigenvalue=min_eig,
        dof_consistent=P.shape == (belief.dof, belief.dof),
    )


# ---------------------------------------------------------------------------
# JSON serialization (trace output)
# ---------------------------------------------------------------------------


def point_to_dict(x: ManifoldPoint) -> dict:
    base = {"side": x.side, "stamp": x.stamp, "state_id": x.state_id}
    if x.is_group:
        base["kind"] = x.value.kind.label
        base["matrix"] = [float(v) for v in np.asarray(x.value.matrix).ravel()]
    elif x.is_composite:
        base["kind"] = "composite"
        base["children"] = [point_to_dict(c) for c in x.children]
    else:
        base["kind"] = "vector"
        base["values"] = [float(v) for v in x.value]
    return base


def point_from_dict(d: dict) -> ManifoldPoint:
    kind = d["kind"]
    side = d.get("side", Side.RIGHT)
    stamp = d.get("stamp")
    state_id = d.get("state_id")
    if kind == "vector":
        return ManifoldPoint(np.array(d["values"], dtype=float), side, stamp, state_id)
    if kind == "composite":
        children = tuple(point_from_dict(c) for c in d["children"])
        return ManifoldPoint(children, side, stamp, state_id)
    gk = next(k for k in lg.GroupKind if k.label == kind)
    n = gk.matrix_dim
    matrix = np.array(d["matrix"], dtype=float).reshape(n, n)
    return ManifoldPoint(lg.GroupElement(gk, matrix), side, stamp, state_id)


def belief_to_dict(b: GaussianBelief) -> dict:
    return {
        "mean": point_to_dict(b.mean),
        "covariance": [float(v) for v in b.covariance.ravel()],
        "dof": b.dof,
    }


def belief_from_dict(d: dict) -> GaussianBelief:
    mean = point_from_dict(d["mean"])
    n = d["dof"]
    return GaussianBelief(mean, np.array(d["covariance"], dtype=float).reshape(n, n))


def belief_to_json(b: GaussianBelief) -> str:
    return json.dumps(belief_to_dict(b))


def belief_from_json(s: str) -> GaussianBelief:
    return belief_from_dict(json.loads(s))
