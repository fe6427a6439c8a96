"""Compression of high-rate inputs into relative motion increments (RMIs).

Three schemes are supported, each with first-order noise propagation:

* linear models ``x_k = F x_{k-1} + L u_{k-1}``, accumulated into
  ``x_j = F_ij x_i + dx_ij``;
* body-frame velocity models on a Lie group, accumulated into
  ``X_j = X_i o dX_ij`` with ``dX_ij`` the product of the per-step
  exponentials;
* IMU kinematics on SE_2(3), ``T_k = G_{k-1} T_{k-1} U_{k-1}``, accumulated
  into ``T_j = dG_ij T_i dU_ij``. The gravity factor ``G`` carries the
  gravity contributions and the input factor ``U`` is built from the
  gyroscope/accelerometer sample via the rotation exponential and its first
  and second body-frame integrals. ``U`` carries a time-shift entry in its
  bottom rows (it is an extended-pose matrix, not a pure SE_2(3) element),
  which produces the velocity-position coupling when composed.

A finished increment can be wrapped into a regular process model with
:func:`as_process_model`, so filters and the batch solver consume
preintegrated spans exactly like raw models.

Increment noise lives in the right tangent space of the accumulated motion,
which maps exactly onto a right perturbation of the propagated state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import liegroups as lg
from . import numdiff
from .exceptions import ContractViolationError
from .liegroups import (
    GroupElement,
    GroupKind,
    TangentVector,
    _coef_q2,
    _coef_t_minus_sin,
    _skew3,
    _so3_exp,
    _so3_left_jacobian,
)
from .models import LinearProcess, ProcessModel, StampedInput
from .states import ManifoldPoint, Side, group_state, ominus, oplus

__all__ = [
    "LinearIncrement",
    "GroupIncrement",
    "ImuIncrement",
    "new_linear_increment",
    "new_group_increment",
    "new_imu_increment",
    "accumulate",
    "apply_increment",
    "as_process_model",
]

_STAMP_TOL = 1e-9


def _check_monotone(span, u: StampedInput, dt: float):
    if dt <= 0:
        raise ContractViolationError(f"dt must be > 0, got {dt}")
    if u.stamp < span[1] - _STAMP_TOL:
        raise ContractViolationError(
            f"input stamp {u.stamp} precedes the increment end {span[1]}"
        )


@dataclass(frozen=True, eq=False)
class LinearIncrement:
    """Accumulated linear model: x_j = transition x_i + offset, noise Q_ij."""

    model: LinearProcess
    transition: np.ndarray
    offset: np.ndarray
    covariance: np.ndarray
    span: tuple

    @property
    def duration(self) -> float:
        return self.span[1] - self.span[0]

    def accumulate(self, u: StampedInput, dt: float) -> "LinearIncrement":
        _check_monotone(self.span, u, dt)
        F = self.model.transition
        L = self.model.input_matrix
        Qu = u.covariance if u.covariance is not None else np.zeros((u.dof, u.dof))
        return LinearIncrement(
            model=self.model,
            transition=F @ self.transition,
            offset=F @ self.offset + L @ u.value,
            covariance=F @ self.covariance @ F.T + L @ Qu @ L.T,
            span=(self.span[0], u.stamp + dt),
        )

    def apply(self, x: ManifoldPoint) -> ManifoldPoint:
        if x.is_group or x.is_composite:
            raise ContractViolationError("linear increments apply to vector states")
        if x.dof != self.transition.shape[0]:
            raise ContractViolationError("state size does not match the increment")
        stamp = None if x.stamp is None else x.stamp + self.duration
        return replace(x, value=self.transition @ x.value + self.offset, stamp=stamp)


@dataclass(frozen=True, eq=False)
class GroupIncrement:
    """Accumulated body-frame velocity motion: X_j = X_i o delta."""

    delta: GroupElement
    covariance: np.ndarray
    span: tuple

    @property
    def duration(self) -> float:
        return self.span[1] - self.span[0]

    def accumulate(self, u: StampedInput, dt: float) -> "GroupIncrement":
        _check_monotone(self.span, u, dt)
        kind = self.delta.kind
        if u.dof != kind.dof:
            raise ContractViolationError(
                f"input dof {u.dof} does not match {kind.label}"
            )
        m = TangentVector(kind, dt * u.value)
        step = lg.exp_map(m)
        A = lg.adjoint(lg.inverse(step))
        B = dt * lg.group_jacobian(m, "right")
        Qu = u.covariance if u.covariance is not None else np.zeros((u.dof, u.dof))
        Q = A @ self.covariance @ A.T + B @ Qu @ B.T
        return GroupIncrement(
            delta=lg.compose(self.delta, step),
            covariance=(Q + Q.T) / 2.0,
            span=(self.span[0], u.stamp + dt),
        )

    def apply(self, x: ManifoldPoint) -> ManifoldPoint:
        if not x.is_group or x.value.kind is not self.delta.kind:
            raise ContractViolationError("state kind does not match the increment")
        stamp = None if x.stamp is None else x.stamp + self.duration
        return replace(x, value=lg.compose(x.value, self.delta), stamp=stamp)


# ---------------------------------------------------------------------------
# IMU on SE_2(3)
# ---------------------------------------------------------------------------


def _imu_input_factor(gyro, accel, dt: float) -> np.ndarray:
    """Per-sample input factor U: exact zero-order-hold integration of the
    body-frame rotation, velocity and position contributions."""
    phi = dt * np.asarray(gyro)
    theta = lg._angle(phi)
    W = _skew3(phi)
    # first and second integrals of Exp(s w) over the step
    J1 = _so3_left_jacobian(phi)
    J2 = 0.5 * np.eye(3) + _coef_t_minus_sin(theta) * W - _coef_q2(theta) * (W @ W)
    U = np.eye(5)
    U[:3, :3] = _so3_exp(phi)
    U[:3, 3] = dt * (J1 @ accel)
    U[:3, 4] = dt * dt * (J2 @ accel)
    U[3, 4] = dt
    return U


def _imu_gravity_factor(gravity, dt: float) -> np.ndarray:
    # The negative time shift cancels the one carried by the input factor,
    # so gravity couples with exactly the time elapsed before each step and
    # the composed product G_ij T U_ij stays a clean SE_2(3) element.
    G = np.eye(5)
    G[:3, 3] = dt * np.asarray(gravity)
    G[:3, 4] = -0.5 * dt * dt * np.asarray(gravity)
    G[3, 4] = -dt
    return G


def _core(matrix: np.ndarray) -> GroupElement:
    """SE_2(3) part of an extended-pose matrix (time-shift entry dropped)."""
    out = np.eye(5, dtype=matrix.dtype)
    out[:3, :5] = matrix[:3, :5]
    return GroupElement(GroupKind.SE2_3, out)


@dataclass(frozen=True, eq=False)
class ImuIncrement:
    """Accumulated IMU motion: T_j = gravity_factor T_i input_factor."""

    gravity: np.ndarray
    gravity_factor: np.ndarray
    input_factor: np.ndarray
    covariance: np.ndarray
    span: tuple

    @property
    def duration(self) -> float:
        return self.span[1] - self.span[0]

    def accumulate(self, u: StampedInput, dt: float) -> "ImuIncrement":
        """Append one (gyro, accel) sample. Noise Jacobians are obtained by
        numerical differentiation of the increment composition."""
        _check_monotone(self.span, u, dt)
        if u.dof != 6:
            raise ContractViolationError("IMU input is [gyro(3); accel(3)]")
        U_k = _imu_input_factor(u.value[:3], u.value[3:], dt)
        old = self.input_factor

        def composed_core(core_point: ManifoldPoint) -> ManifoldPoint:
            m = old.copy()
            m[:3, :5] = core_point.value.matrix[:3, :5]
            return group_state(_core(m @ U_k), side=Side.RIGHT)

        core_state = group_state(_core(old), side=Side.RIGHT)
        A = numdiff.jacobian(composed_core, core_state)

        base = _core(old @ U_k)

        def input_effect(w: ManifoldPoint) -> np.ndarray:
            U_w = _imu_input_factor(
                u.value[:3] + w.value[:3], u.value[3:] + w.value[3:], dt
            )
            return ominus(group_state(_core(old @ U_w), side=Side.RIGHT),
                          group_state(base, side=Side.RIGHT))

        from .states import vector_state
        B = numdiff.jacobian(input_effect, vector_state(np.zeros(6)))
        Qu = u.covariance if u.covariance is not None else np.zeros((6, 6))
        Q = A @ self.covariance @ A.T + B @ Qu @ B.T
        return ImuIncrement(
            gravity=self.gravity,
            gravity_factor=_imu_gravity_factor(self.gravity, dt) @ self.gravity_factor,
            input_factor=old @ U_k,
            covariance=(Q + Q.T) / 2.0,
            span=(self.span[0], u.stamp + dt),
        )

    def apply(self, x: ManifoldPoint) -> ManifoldPoint:
        if not x.is_group or x.value.kind is not GroupKind.SE2_3:
            raise ContractViolationError("IMU increments apply to SE_2(3) states")
        stamp = None if x.stamp is None else x.stamp + self.duration
        product = self.gravity_factor @ x.value.matrix @ self.input_factor
        return replace(x, value=_core(product), stamp=stamp)


def new_linear_increment(model: LinearProcess, start_time: float) -> LinearIncrement:
    n = model.transition.shape[0]
    return LinearIncrement(model, np.eye(n), np.zeros(n), np.zeros((n, n)),
                           (start_time, start_time))


def new_group_increment(kind: GroupKind, start_time: float) -> GroupIncrement:
    return GroupIncrement(lg.identity(kind), np.zeros((kind.dof, kind.dof)),
                          (start_time, start_time))


def new_imu_increment(gravity, start_time: float) -> ImuIncrement:
    return ImuIncrement(np.asarray(gravity, dtype=float), np.eye(5), np.eye(5),
                        np.zeros((9, 9)), (start_time, start_time))


def accumulate(increment, u: StampedInput, dt: float):
    """Functional form of ``increment.accumulate(u, dt)``."""
    return increment.accumulate(u, dt)


def apply_increment(increment, x: ManifoldPoint) -> ManifoldPoint:
    """Propagate a state through a finished increment."""
    return increment.apply(x)


class PreintegratedProcess(ProcessModel):
    """A finished increment exposed through the standard process model
    interface: evaluate applies the increment, the covariance is the
    propagated Q_ij (transported for left-convention states), and dt must
    equal the increment span."""

    def __init__(self, increment):
        self.increment = increment

    def _check_dt(self, dt: float):
        if abs(dt - self.increment.duration) > 1e-6:
            raise ContractViolationError(
                f"dt {dt} does not match the increment span {self.increment.duration}"
            )

    def evaluate(self, x, u, dt):
        self._check_dt(dt)
        return self.increment.apply(x)

    def jacobian(self, x, u, dt):
        inc = self.increment
        if isinstance(inc, LinearIncrement):
            return inc.transition.copy()
        if isinstance(inc, GroupIncrement):
            if x.side == Side.LEFT:
                return np.eye(x.dof)
            return lg.adjoint(lg.inverse(inc.delta))
        return super().jacobian(x, u, dt)

    def covariance(self, x, u, dt):
        inc = self.increment
        if isinstance(inc, LinearIncrement) or x.side == Side.RIGHT:
            return inc.covariance.copy()
        # increment noise is a right perturbation of the propagated state;
        # transport it to the left tangent space
        x_next = self.evaluate(x, u, dt)
        Ad = lg.adjoint(x_next.value)
        Q = Ad @ inc.covariance @ Ad.T
        return (Q + Q.T) / 2.0


def as_process_model(increment) -> PreintegratedProcess:
    """Wrap a finished increment as a process model for filters and batch."""
    return PreintegratedProcess(increment)
