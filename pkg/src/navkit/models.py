"""Process and measurement models in the standard form

    X_k = f(X_{k-1}, u_{k-1}) (+) w_{k-1},      w ~ N(0, Q)
    y_k = g(X_k) + v_k,                          v ~ N(0, R)

plus a small library of built-in models: body-frame velocity inputs on a
Lie group, linear models on vector states, range to a known anchor, and
left/right invariant point measurements.

Implementing a model means subclassing :class:`ProcessModel` or
:class:`MeasurementModel` and providing ``evaluate`` and a covariance;
Jacobians default to numerical differentiation and can be overridden with
analytic expressions for speed and accuracy.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from . import liegroups as lg
from . import numdiff
from .exceptions import ContractViolationError
from .states import ManifoldPoint, Side, vector_state

__all__ = [
    "StampedInput",
    "StampedMeasurement",
    "ProcessModel",
    "MeasurementModel",
    "InvariantForm",
    "BodyVelocityProcess",
    "LinearProcess",
    "RangeToAnchor",
    "InvariantPointMeasurement",
    "StackedMeasurementModel",
    "LinearMeasurement",
]


@dataclass(frozen=True, eq=False)
class StampedInput:
    """A timestamped input vector, optionally with its noise covariance Q^u."""

    value: np.ndarray
    stamp: float
    covariance: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.atleast_1d(np.array(self.value, dtype=float))
        v.flags.writeable = False
        object.__setattr__(self, "value", v)
        if self.covariance is not None:
            Q = np.array(self.covariance, dtype=float)
            if Q.shape != (v.shape[0], v.shape[0]):
                raise ContractViolationError(
                    f"input covariance must be {v.shape[0]}x{v.shape[0]}, got {Q.shape}"
                )
            Q = (Q + Q.T) / 2.0
            Q.flags.writeable = False
            object.__setattr__(self, "covariance", Q)

    @property
    def dof(self) -> int:
        return self.value.shape[0]


@dataclass(frozen=True, eq=False)
class StampedMeasurement:
    """A timestamped measurement vector bound to its measurement model."""

    value: np.ndarray
    stamp: float
    model: "MeasurementModel"
    target_state_id: Optional[Hashable] = None

    def __post_init__(self):
        v = np.atleast_1d(np.array(self.value, dtype=float))
        if v.shape != (self.model.dim,):
            raise ContractViolationError(
                f"measurement has {v.shape[0]} values but the model outputs {self.model.dim}"
            )
        v.flags.writeable = False
        object.__setattr__(self, "value", v)


class InvariantForm(enum.Enum):
    LEFT = "left"    # y = X . b + v
    RIGHT = "right"  # y = X^-1 . b + v


class ProcessModel:
    """Base process model. Subclasses implement ``evaluate``; ``jacobian``
    and ``input_jacobian`` default to central differences.

    ``evaluate`` must preserve the state's structure and side and advance
    its stamp by dt.
    """

    #: set True when evaluate() is safe over complexified arithmetic
    supports_complex_step = False

    def evaluate(self, x: ManifoldPoint, u: Optional[StampedInput], dt: float) -> ManifoldPoint:
        raise NotImplementedError

    def jacobian(self, x: ManifoldPoint, u: Optional[StampedInput], dt: float) -> np.ndarray:
        func = lambda pt: self.evaluate(pt, u, dt)
        return numdiff.jacobian(func, x)

    def input_jacobian(self, x: ManifoldPoint, u: StampedInput, dt: float) -> np.ndarray:
        base = self.evaluate(x, u, dt)
        def func(w: ManifoldPoint) -> np.ndarray:
            perturbed = StampedInput(u.value + w.value, u.stamp)
            from .states import ominus
            return ominus(self.evaluate(x, perturbed, dt), base)
        return numdiff.jacobian(func, vector_state(np.zeros(u.dof)))

    def covariance(self, x: ManifoldPoint, u: Optional[StampedInput], dt: float) -> np.ndarray:
        """Process noise mapped into the state tangent space: Q = L Q^u L^T."""
        if u is None or u.covariance is None:
            raise ContractViolationError(
                "default process covariance needs an input with covariance; "
                "override covariance() for models with state-additive noise"
            )
        L = self.input_jacobian(x, u, dt)
        Q = L @ u.covariance @ L.T
        return (Q + Q.T) / 2.0

    @staticmethod
    def _advance(x: ManifoldPoint, dt: float) -> Optional[float]:
        return None if x.stamp is None else x.stamp + dt


class MeasurementModel:
    """Base measurement model; subclasses implement ``evaluate`` and
    ``covariance``. ``invariant_form`` stays None unless the model is of
    the form y = X . b (left) or y = X^-1 . b (right)."""

    supports_complex_step = False
    invariant_form: Optional[InvariantForm] = None

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def evaluate(self, x: ManifoldPoint) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: ManifoldPoint) -> np.ndarray:
        return numdiff.jacobian(self.evaluate, x)

    def covariance(self, x: ManifoldPoint) -> np.ndarray:
        raise NotImplementedError


def _resolve_target(x: ManifoldPoint, target_state_id) -> tuple[ManifoldPoint, Optional[slice]]:
    """Pick the sub-state a model reads: the full state, or the composite
    child named by target_state_id (returning its column slice too)."""
    if target_state_id is not None and x.is_composite:
        return x.child(target_state_id)
    return x, None


def _embed_columns(full_dof: int, block: np.ndarray, cols: Optional[slice]) -> np.ndarray:
    if cols is None:
        return block
    out = np.zeros((block.shape[0], full_dof))
    out[:, cols] = block
    return out


def _position(elem: lg.GroupElement) -> np.ndarray:
    """Translation block of a pose-like element (last column)."""
    k = elem.kind
    if k is lg.GroupKind.SE2:
        return elem.matrix[:2, 2]
    if k is lg.GroupKind.SE3:
        return elem.matrix[:3, 3]
    if k is lg.GroupKind.SE2_3:
        return elem.matrix[:3, 4]
    raise ContractViolationError(f"{k.label} has no position block")


class BodyVelocityProcess(ProcessModel):
    """X_k = X_{k-1} o Exp(dt * u): body-frame velocity input on any of the
    supported groups. The input noise covariance rides on the input."""

    supports_complex_step = True

    def __init__(self):
        # one-slot memo for the per-step exponential, shared by
        # evaluate/jacobian/covariance within one filter step; results are
        # deterministic so a stale slot only costs a recompute
        self._step_key = None
        self._step_value = None

    def _step(self, kind: lg.GroupKind, u, dt: float) -> lg.GroupElement:
        key = (kind, dt, u.value.tobytes())
        if key != self._step_key:
            self._step_value = lg.exp_map(lg._tangent(kind, dt * u.value))
            self._step_key = key
        return self._step_value

    def evaluate(self, x, u, dt):
        if dt <= 0:
            raise ContractViolationError(f"dt must be > 0, got {dt}")
        if not x.is_group:
            raise ContractViolationError("BodyVelocityProcess needs a group state")
        if u.dof != x.dof:
            raise ContractViolationError(
                f"input dof {u.dof} does not match state dof {x.dof}"
            )
        if np.iscomplexobj(x.value.matrix) or np.iscomplexobj(u.value):
            step = lg.exp_map(lg._tangent(x.value.kind, dt * u.value))
        else:
            step = self._step(x.value.kind, u, dt)
        from dataclasses import replace
        return replace(x, value=lg.compose(x.value, step), stamp=self._advance(x, dt))

    def jacobian(self, x, u, dt):
        kind = x.value.kind
        if x.side == Side.LEFT:
            # left perturbations commute through right-multiplied inputs
            return np.eye(kind.dof)
        return lg.adjoint(lg.inverse(self._step(kind, u, dt)))

    def input_jacobian(self, x, u, dt):
        kind = x.value.kind
        m = lg.TangentVector(kind, dt * u.value)
        if x.side == Side.RIGHT:
            return dt * lg.group_jacobian(m, "right")
        return dt * (lg.adjoint(x.value) @ lg.group_jacobian(m, "left"))


class LinearProcess(ProcessModel):
    """x_k = F x_{k-1} + L u_{k-1} on a vector state; Jacobians are exact."""

    supports_complex_step = True

    def __init__(self, transition: np.ndarray, input_matrix: np.ndarray):
        self.transition = np.atleast_2d(np.asarray(transition, dtype=float))
        self.input_matrix = np.atleast_2d(np.asarray(input_matrix, dtype=float))
        if self.transition.shape[0] != self.transition.shape[1]:
            raise ContractViolationError("transition matrix must be square")
        if self.input_matrix.shape[0] != self.transition.shape[0]:
            raise ContractViolationError("input matrix row count must match the state size")

    def evaluate(self, x, u, dt):
        if x.is_group or x.is_composite:
            raise ContractViolationError("LinearProcess needs a vector state")
        if x.dof != self.transition.shape[0]:
            raise ContractViolationError(
                f"state dof {x.dof} does not match transition size {self.transition.shape[0]}"
            )
        u_vec = np.zeros(self.input_matrix.shape[1]) if u is None else u.value
        if u_vec.shape[0] != self.input_matrix.shape[1]:
            raise ContractViolationError("input size does not match the input matrix")
        from dataclasses import replace
        new = self.transition @ x.value + self.input_matrix @ u_vec
        return replace(x, value=new, stamp=self._advance(x, dt))

    def jacobian(self, x, u, dt):
        return self.transition.copy()

    def input_jacobian(self, x, u, dt):
        return self.input_matrix.copy()


class RangeToAnchor(MeasurementModel):
    """Scalar range from a pose's position to a fixed anchor point."""

    supports_complex_step = True

    def __init__(self, anchor, variance: float, target_state_id=None):
        self.anchor = np.asarray(anchor, dtype=float)
        self.variance = float(variance)
        self.target_state_id = target_state_id
        if self.variance <= 0:
            raise ContractViolationError("range variance must be > 0")

    @property
    def dim(self) -> int:
        return 1

    def evaluate(self, x):
        pose, _ = _resolve_target(x, self.target_state_id)
        d = _position(pose.value) - self.anchor
        if np.iscomplexobj(d):
            return np.atleast_1d(np.sqrt(np.dot(d, d)))
        return np.atleast_1d(np.linalg.norm(d))

    def jacobian(self, x):
        pose, cols = _resolve_target(x, self.target_state_id)
        elem = pose.value
        k = elem.kind
        r = _position(elem)
        d = r - self.anchor
        rho = float(np.linalg.norm(d))
        n_rot = 1 if k is lg.GroupKind.SE2 else 3
        n_pos = 2 if k is lg.GroupKind.SE2 else 3
        row = np.zeros(pose.dof)
        if rho < 1e-12:
            warnings.warn("range is zero; Jacobian carries no direction information")
            return _embed_columns(x.dof, row[None, :], cols)
        u_dir = d / rho
        C = elem.matrix[:n_pos, :n_pos]
        if pose.side == Side.RIGHT:
            # position responds only to the translation perturbation: r + C drho
            row[-n_pos:] = u_dir @ C
        else:
            # world-frame perturbation: r + dphi^ r + drho
            if k is lg.GroupKind.SE2:
                row[0] = u_dir @ (lg._J2 @ r)
            else:
                row[:n_rot] = u_dir @ (-lg._skew3(r))
            row[-n_pos:] = u_dir
        return _embed_columns(x.dof, row[None, :], cols)

    def covariance(self, x):
        return np.array([[self.variance]])


class InvariantPointMeasurement(MeasurementModel):
    """Point measurement y = X . b (left form) or y = X^-1 . b (right form)
    of a known vector b, using the group action of the state."""

    supports_complex_step = True

    def __init__(self, known_vector, form: InvariantForm, covariance,
                 target_state_id=None):
        self.known_vector = np.asarray(known_vector, dtype=float)
        self.form = form
        self._cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        self.target_state_id = target_state_id

    @property
    def invariant_form(self):
        return self.form

    @property
    def dim(self) -> int:
        return self.known_vector.shape[0]

    def evaluate(self, x):
        pose, _ = _resolve_target(x, self.target_state_id)
        elem = pose.value
        if self.form is InvariantForm.LEFT:
            return lg.act(elem, self.known_vector)
        return lg.act(lg.inverse(elem), self.known_vector)

    def jacobian(self, x):
        pose, cols = _resolve_target(x, self.target_state_id)
        elem = pose.value
        k = elem.kind
        n = lg.action_dim(k)
        b_h = np.zeros(k.matrix_dim)
        b_h[:n] = self.known_vector
        if k.matrix_dim > n:
            b_h[-1] = 1.0
        basis = np.eye(k.dof)
        G = np.zeros((n, k.dof))
        m = elem.matrix
        m_inv = lg.inverse(elem).matrix
        for i in range(k.dof):
            Wb = lg.wedge(lg.TangentVector(k, basis[i])) @ b_h
            if self.form is InvariantForm.LEFT:
                col = (m @ Wb if pose.side == Side.RIGHT else
                       lg.wedge(lg.TangentVector(k, basis[i])) @ (m @ b_h))
            else:
                col = (-(lg.wedge(lg.TangentVector(k, basis[i])) @ (m_inv @ b_h))
                       if pose.side == Side.RIGHT else -(m_inv @ Wb))
            G[:, i] = col[:n]
        return _embed_columns(x.dof, G, cols)

    def covariance(self, x):
        return self._cov.copy()


class StackedMeasurementModel(MeasurementModel):
    """Several measurement models of one state fused into a single model
    (outputs concatenated, noise block diagonal)."""

    def __init__(self, models: Sequence[MeasurementModel]):
        if not models:
            raise ContractViolationError("need at least one model to stack")
        self.models = tuple(models)

    @property
    def dim(self) -> int:
        return sum(m.dim for m in self.models)

    def evaluate(self, x):
        return np.concatenate([m.evaluate(x) for m in self.models])

    def jacobian(self, x):
        return np.vstack([m.jacobian(x) for m in self.models])

    def covariance(self, x):
        import scipy.linalg
        return scipy.linalg.block_diag(*[m.covariance(x) for m in self.models])


class LinearMeasurement(MeasurementModel):
    """y = H x on a vector state; Jacobian is exact."""

    supports_complex_step = True

    def __init__(self, observation: np.ndarray, covariance):
        self.observation = np.atleast_2d(np.asarray(observation, dtype=float))
        self._cov = np.atleast_2d(np.asarray(covariance, dtype=float))

    @property
    def dim(self) -> int:
        return self.observation.shape[0]

    def evaluate(self, x):
        return self.observation @ x.value

    def jacobian(self, x):
        return self.observation.copy()

    def covariance(self, x):
        return self._cov.copy()
