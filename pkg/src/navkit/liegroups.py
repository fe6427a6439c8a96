"""Closed-form matrix Lie group kernel for SO(2), SO(3), SE(2), SE(3), SE_2(3).

Group elements are square matrices, the group operation is matrix
multiplication, and each group comes with closed-form Exp/Log, wedge/vee,
adjoint and left/right group Jacobians.

Tangent coordinate ordering (fixed convention, used consistently everywhere):

* SO(2): ``[angle]``
* SO(3): ``[rx, ry, rz]`` (rotation vector)
* SE(2): ``[angle, x, y]``
* SE(3): ``[rx, ry, rz, x, y, z]`` (rotation first, then translation)
* SE_2(3): ``[rotation(3), velocity(3), position(3)]``

All formulas are written generically over the scalar field so they remain
valid for complex-valued inputs, which is what makes complex-step
differentiation work on these groups.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolationError

__all__ = [
    "GroupKind",
    "GroupElement",
    "TangentVector",
    "identity",
    "compose",
    "inverse",
    "exp_map",
    "log_map",
    "wedge",
    "vee",
    "adjoint",
    "algebra_adjoint",
    "group_jacobian",
    "check_element",
    "act",
    "action_dim",
    "rotation_block",
]

# Below this rotation angle the trigonometric coefficients switch to their
# Taylor series; see _coef_* helpers for the two cancellation-prone
# higher-order coefficients which switch earlier.
_SMALL_ANGLE = 1e-7


class GroupKind(enum.Enum):
    """The supported matrix Lie groups with their dimensions."""

    SO2 = ("SO2", 1, 2)
    SO3 = ("SO3", 3, 3)
    SE2 = ("SE2", 3, 3)
    SE3 = ("SE3", 6, 4)
    SE2_3 = ("SE2_3", 9, 5)

    def __init__(self, label: str, dof: int, matrix_dim: int):
        self.label = label
        self.dof = dof
        self.matrix_dim = matrix_dim


@dataclass(frozen=True, eq=False)
class GroupElement:
    """A group element: a ``matrix_dim x matrix_dim`` matrix of one kind.

    The matrix is stored read-only; operations return fresh elements.
    Structural validity (orthonormal rotation block, unit bottom rows) is
    checked on demand by :func:`check_element`, not on every operation.
    """

    kind: GroupKind
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.array(self.matrix)
        if m.dtype != np.float64 and m.dtype != np.complex128:
            m = m.astype(float)
        d = self.kind.matrix_dim
        if m.shape != (d, d):
            raise ContractViolationError(
                f"{self.kind.label} element needs a {d}x{d} matrix, got {m.shape}"
            )
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


def _element(kind: GroupKind, matrix: np.ndarray) -> GroupElement:
    """Internal constructor for freshly computed matrices (skips the
    defensive copy and shape check of the public dataclass path)."""
    e = object.__new__(GroupElement)
    matrix.flags.writeable = False
    object.__setattr__(e, "kind", kind)
    object.__setattr__(e, "matrix", matrix)
    return e


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Tangent-space coordinates (length ``kind.dof``) for one group."""

    kind: GroupKind
    coords: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.array(self.coords))
        if c.shape != (self.kind.dof,):
            raise ContractViolationError(
                f"{self.kind.label} tangent needs {self.kind.dof} coords, got shape {c.shape}"
            )
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)


def _tangent(kind: GroupKind, coords: np.ndarray) -> TangentVector:
    """Internal constructor: wraps coords without the defensive copy."""
    t = object.__new__(TangentVector)
    object.__setattr__(t, "kind", kind)
    object.__setattr__(t, "coords", coords)
    return t


# ---------------------------------------------------------------------------
# scalar coefficient helpers, generic over real/complex
# ---------------------------------------------------------------------------


def _sinc(theta):
    """sin(t)/t, series below the small-angle switch."""
    if abs(theta) < _SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    return np.sin(theta) / theta


def _coef_one_minus_cos(theta):
    """(1 - cos t)/t^2 via the half-angle identity (no cancellation)."""
    h = _sinc(theta / 2.0)
    return 0.5 * h * h


def _coef_t_minus_sin(theta):
    """(t - sin t)/t^3; cancellation-prone, series below 1e-4."""
    if abs(theta) < 1e-4:
        t2 = theta * theta
        return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return (theta - np.sin(theta)) / theta**3


def _coef_q2(theta):
    """(1 - t^2/2 - cos t)/t^4; cancellation-prone, series below 1e-2."""
    if abs(theta) < 1e-2:
        t2 = theta * theta
        return -1.0 / 24.0 + t2 / 720.0 - t2 * t2 / 40320.0 + t2 * t2 * t2 / 3628800.0
    return (1.0 - theta * theta / 2.0 - np.cos(theta)) / theta**4


def _coef_q3(theta):
    """(t - sin t - t^3/6)/t^5; cancellation-prone, series below 1e-2."""
    if abs(theta) < 1e-2:
        t2 = theta * theta
        return -1.0 / 120.0 + t2 / 5040.0 - t2 * t2 / 362880.0 + t2 * t2 * t2 / 39916800.0
    return (theta - np.sin(theta) - theta**3 / 6.0) / theta**5


def _angle(phi):
    """Unconjugated Euclidean norm, sqrt(phi . phi): holomorphic in phi."""
    if np.iscomplexobj(phi):
        return np.sqrt(np.dot(phi, phi) + 0j)
    return math.sqrt(float(phi @ phi))


def _eye(n, like):
    return np.eye(n, dtype=complex) if np.iscomplexobj(like) else np.eye(n)


def _zeros(shape, like):
    return np.zeros(shape, dtype=complex) if np.iscomplexobj(like) else np.zeros(shape)


# ---------------------------------------------------------------------------
# SO(3) core, reused by SE(3) and SE_2(3)
# ---------------------------------------------------------------------------


def _skew3(v):
    out = _zeros((3, 3), v)
    out[0, 1] = -v[2]
    out[0, 2] = v[1]
    out[1, 0] = v[2]
    out[1, 2] = -v[0]
    out[2, 0] = -v[1]
    out[2, 1] = v[0]
    return out


def _unskew3(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _so3_exp(phi):
    theta = _angle(phi)
    W = _skew3(phi)
    return _eye(3, phi) + _sinc(theta) * W + _coef_one_minus_cos(theta) * (W @ W)


def _so3_left_jacobian(phi):
    theta = _angle(phi)
    W = _skew3(phi)
    return _eye(3, phi) + _coef_one_minus_cos(theta) * W + _coef_t_minus_sin(theta) * (W @ W)


def _so3_left_jacobian_inv(phi):
    """Closed-form inverse of the SO(3) left Jacobian; finite on (0, pi]."""
    theta = _angle(phi)
    W = _skew3(phi)
    if abs(theta) < 1e-4:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        c = (1.0 / (theta * theta)
             - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta)))
    return _eye(3, phi) - 0.5 * W + c * (W @ W)


def _so3_log(C):
    if np.iscomplexobj(C):
        # Holomorphic path used by complex-step differentiation. Accuracy
        # degrades near angle 0 and pi, but the small-angle branch covers
        # the former and the imaginary (derivative) part is unaffected at
        # first order for moderate angles.
        cos_theta = (np.trace(C) - 1.0) / 2.0
        theta = np.arccos(cos_theta + 0j)
        w = _unskew3((C - C.T) / 2.0)  # sin(theta) * axis
        if abs(theta) < _SMALL_ANGLE:
            t2 = theta * theta
            return w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
        return w * (theta / np.sin(theta))

    w = _unskew3((C - C.T) / 2.0)  # sin(theta) * axis, theta in [0, pi]
    s = float(np.linalg.norm(w))
    c = (float(np.trace(C)) - 1.0) / 2.0
    theta = np.arctan2(s, c)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        return w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    if np.pi - theta > 1e-3:
        return w * (theta / s)
    # Near pi the sine-based extraction loses the axis; recover it from the
    # symmetric part instead: (C + C^T)/2 = cos(t) I + (1 - cos(t)) a a^T.
    M = ((C + C.T) / 2.0 - np.cos(theta) * np.eye(3)) / (1.0 - np.cos(theta))
    i = int(np.argmax(np.diag(M)))
    axis = M[:, i] / np.sqrt(max(M[i, i], np.finfo(float).tiny))
    axis = axis / np.linalg.norm(axis)
    if s > 1e-12:
        if float(w @ axis) < 0.0:
            axis = -axis
    else:
        # Angle is pi to machine precision: both signs are valid; pick the
        # axis whose first nonzero component is positive.
        for component in axis:
            if abs(component) > 1e-12:
                if component < 0.0:
                    axis = -axis
                break
    return theta * axis


def _so3_log_angle_axis_generic(C):
    """Log for any kind that embeds an SO(3) block."""
    return _so3_log(C)


# ---------------------------------------------------------------------------
# SO(2) / SE(2) helpers
# ---------------------------------------------------------------------------

_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _so2_exp(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _so2_log(C):
    if np.iscomplexobj(C):
        # -i log(c + i s) equals atan2(s, c) for real rotations and is
        # holomorphic in the entries away from angle pi.
        return -1j * np.log(C[0, 0] + 1j * C[1, 0])
    return float(np.arctan2(C[1, 0], C[0, 0]))


def _se2_v_matrix(angle):
    """V(a) with Exp translation t = V(a) rho; V = sinc(a) I + ((1-cos a)/a) J."""
    return _sinc(angle) * _eye(2, np.atleast_1d(angle)) + (
        _coef_one_minus_cos(angle) * angle
    ) * _J2.astype(complex if np.iscomplexobj(np.atleast_1d(angle)) else float)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def identity(kind: GroupKind) -> GroupElement:
    return _element(kind, np.eye(kind.matrix_dim))


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Group operation: plain matrix product."""
    if a.kind is not b.kind:
        raise ContractViolationError(f"cannot compose {a.kind.label} with {b.kind.label}")
    return _element(a.kind, a.matrix @ b.matrix)


def inverse(x: GroupElement) -> GroupElement:
    """Closed-form block inverse (rotation transpose, rotated columns)."""
    k = x.kind
    m = x.matrix
    if k is GroupKind.SO2 or k is GroupKind.SO3:
        return _element(k, m.T.copy())
    n = 2 if k is GroupKind.SE2 else 3
    Ct = m[:n, :n].T
    out = _eye(k.matrix_dim, m)
    out[:n, :n] = Ct
    for col in range(n, k.matrix_dim):
        out[:n, col] = -Ct @ m[:n, col]
    return _element(k, out)


def wedge(xi: TangentVector) -> np.ndarray:
    """Map tangent coordinates to a Lie algebra matrix."""
    k, v = xi.kind, xi.coords
    if k is GroupKind.SO2:
        out = _zeros((2, 2), v)
        out[0, 1] = -v[0]
        out[1, 0] = v[0]
        return out
    if k is GroupKind.SO3:
        return _skew3(v)
    if k is GroupKind.SE2:
        out = _zeros((3, 3), v)
        out[0, 1] = -v[0]
        out[1, 0] = v[0]
        out[:2, 2] = v[1:]
        return out
    if k is GroupKind.SE3:
        out = _zeros((4, 4), v)
        out[:3, :3] = _skew3(v[:3])
        out[:3, 3] = v[3:]
        return out
    out = _zeros((5, 5), v)
    out[:3, :3] = _skew3(v[:3])
    out[:3, 3] = v[3:6]
    out[:3, 4] = v[6:]
    return out


def vee(m: np.ndarray, kind: GroupKind, tol: float = 1e-9) -> TangentVector:
    """Inverse of :func:`wedge`; validates the algebra structure."""
    m = np.asarray(m)
    d = kind.matrix_dim
    if m.shape != (d, d):
        raise ContractViolationError(f"vee expects a {d}x{d} matrix for {kind.label}")
    n = 2 if kind in (GroupKind.SO2, GroupKind.SE2) else 3
    rot = m[:n, :n]
    defect = float(np.max(np.abs(rot + rot.T)))
    if kind not in (GroupKind.SO2, GroupKind.SO3):
        defect = max(defect, float(np.max(np.abs(m[n:, :]))))
    if defect > tol:
        raise ContractViolationError(
            f"matrix is not in the {kind.label} Lie algebra (residual {defect:.2e})"
        )
    if kind is GroupKind.SO2:
        return TangentVector(kind, np.array([m[1, 0]]))
    if kind is GroupKind.SO3:
        return TangentVector(kind, _unskew3(m))
    if kind is GroupKind.SE2:
        return TangentVector(kind, np.array([m[1, 0], m[0, 2], m[1, 2]]))
    if kind is GroupKind.SE3:
        return TangentVector(kind, np.concatenate([_unskew3(m[:3, :3]), m[:3, 3]]))
    return TangentVector(
        kind, np.concatenate([_unskew3(m[:3, :3]), m[:3, 3], m[:3, 4]])
    )


def exp_map(xi: TangentVector) -> GroupElement:
    """Exponential map, closed form per group."""
    k, v = xi.kind, xi.coords
    if k is GroupKind.SO2:
        return _element(k, _so2_exp(v[0]))
    if k is GroupKind.SO3:
        return _element(k, _so3_exp(v))
    if k is GroupKind.SE2:
        out = _eye(3, v)
        out[:2, :2] = _so2_exp(v[0])
        out[:2, 2] = _se2_v_matrix(v[0]) @ v[1:]
        return _element(k, out)
    if k is GroupKind.SE3:
        J = _so3_left_jacobian(v[:3])
        out = _eye(4, v)
        out[:3, :3] = _so3_exp(v[:3])
        out[:3, 3] = J @ v[3:]
        return _element(k, out)
    J = _so3_left_jacobian(v[:3])
    out = _eye(5, v)
    out[:3, :3] = _so3_exp(v[:3])
    out[:3, 3] = J @ v[3:6]
    out[:3, 4] = J @ v[6:]
    return _element(k, out)


def log_map(x: GroupElement) -> TangentVector:
    """Logarithmic map, principal branch (rotation angle in [0, pi]).

    Accuracy degrades as the rotation angle approaches pi; no error is
    raised there.
    """
    k, m = x.kind, x.matrix
    if k is GroupKind.SO2:
        return TangentVector(k, np.atleast_1d(_so2_log(m)))
    if k is GroupKind.SO3:
        return TangentVector(k, _so3_log(m))
    if k is GroupKind.SE2:
        angle = _so2_log(m[:2, :2])
        rho = np.linalg.solve(_se2_v_matrix(angle), m[:2, 2])
        return TangentVector(k, np.concatenate([np.atleast_1d(angle), rho]))
    phi = _so3_log(m[:3, :3])
    J_inv = _so3_left_jacobian_inv(phi)
    if k is GroupKind.SE3:
        return TangentVector(k, np.concatenate([phi, J_inv @ m[:3, 3]]))
    return TangentVector(
        k, np.concatenate([phi, J_inv @ m[:3, 3], J_inv @ m[:3, 4]])
    )


def adjoint(x: GroupElement) -> np.ndarray:
    """Adjoint matrix: satisfies X Exp(xi) X^-1 = Exp(Ad(X) xi)."""
    k, m = x.kind, x.matrix
    if k is GroupKind.SO2:
        return np.ones((1, 1))
    if k is GroupKind.SO3:
        return m.copy()
    if k is GroupKind.SE2:
        C = m[:2, :2]
        r = m[:2, 2]
        out = _zeros((3, 3), m)
        out[0, 0] = 1.0
        out[1:, 0] = -_J2 @ r
        out[1:, 1:] = C
        return out
    if k is GroupKind.SE3:
        C = m[:3, :3]
        out = _zeros((6, 6), m)
        out[:3, :3] = C
        out[3:, 3:] = C
        out[3:, :3] = _skew3(m[:3, 3]) @ C
        return out
    C = m[:3, :3]
    out = _zeros((9, 9), m)
    out[:3, :3] = C
    out[3:6, 3:6] = C
    out[6:, 6:] = C
    out[3:6, :3] = _skew3(m[:3, 3]) @ C
    out[6:, :3] = _skew3(m[:3, 4]) @ C
    return out


def algebra_adjoint(xi: TangentVector) -> np.ndarray:
    """Little adjoint ad(xi), the derivative of Ad(Exp(s xi)) at s = 0."""
    k, v = xi.kind, xi.coords
    if k is GroupKind.SO2:
        return np.zeros((1, 1))
    if k is GroupKind.SO3:
        return _skew3(v)
    if k is GroupKind.SE2:
        out = _zeros((3, 3), v)
        out[1:, 0] = -_J2 @ v[1:]
        out[1:, 1:] = v[0] * _J2
        return out
    if k is GroupKind.SE3:
        W = _skew3(v[:3])
        out = _zeros((6, 6), v)
        out[:3, :3] = W
        out[3:, 3:] = W
        out[3:, :3] = _skew3(v[3:])
        return out
    W = _skew3(v[:3])
    out = _zeros((9, 9), v)
    out[:3, :3] = W
    out[3:6, 3:6] = W
    out[6:, 6:] = W
    out[3:6, :3] = _skew3(v[3:6])
    out[6:, :3] = _skew3(v[6:])
    return out


def _se3_jacobian_q(phi, rho):
    """Translation-rotation coupling block of the SE(3)-family left Jacobian."""
    theta = _angle(phi)
    W = _skew3(phi)
    V = _skew3(rho)
    WV, VW = W @ V, V @ W
    WVW = WV @ W
    c1 = _coef_t_minus_sin(theta)
    c2 = -_coef_q2(theta)
    c3 = -0.5 * (_coef_q2(theta) - 3.0 * _coef_q3(theta))
    return (
        0.5 * V
        + c1 * (WV + VW + W @ VW)
        + c2 * (W @ WV + VW @ W - 3.0 * WVW)
        + c3 * (WVW @ W + W @ WVW)
    )


def group_jacobian(xi: TangentVector, side: str = "left") -> np.ndarray:
    """Left or right group Jacobian of Exp at xi, closed form.

    Satisfies J_left(xi) = J_right(-xi) and matches numerical
    differentiation of the exponential map.
    """
    if side not in ("left", "right"):
        raise ContractViolationError(f"side must be 'left' or 'right', got {side!r}")
    k = xi.kind
    v = xi.coords if side == "left" else -xi.coords
    if k is GroupKind.SO2:
        return np.ones((1, 1))
    if k is GroupKind.SO3:
        return _so3_left_jacobian(v)
    if k is GroupKind.SE2:
        angle, rho = v[0], v[1:]
        out = _zeros((3, 3), v)
        out[0, 0] = 1.0
        out[1:, 1:] = _se2_v_matrix(angle)
        # phi2(a J2) (-J2 rho) with phi2(z) = (e^z - 1 - z)/z^2
        out[1:, 0] = -_coef_one_minus_cos(angle) * (_J2 @ rho) + (
            _coef_t_minus_sin(angle) * angle
        ) * rho
        return out
    if k is GroupKind.SE3:
        J = _so3_left_jacobian(v[:3])
        out = _zeros((6, 6), v)
        out[:3, :3] = J
        out[3:, 3:] = J
        out[3:, :3] = _se3_jacobian_q(v[:3], v[3:])
        return out
    J = _so3_left_jacobian(v[:3])
    out = _zeros((9, 9), v)
    out[:3, :3] = J
    out[3:6, 3:6] = J
    out[6:, 6:] = J
    out[3:6, :3] = _se3_jacobian_q(v[:3], v[3:6])
    out[6:, :3] = _se3_jacobian_q(v[:3], v[6:])
    return out


def check_element(x: GroupElement, tol: float = 1e-9) -> None:
    """Validate the group constraints; raises on violation.

    Validation is opt-in for performance: operations do not call this.
    """
    k, m = x.kind, x.matrix
    if np.iscomplexobj(m):
        return  # complexified elements arise only inside complex-step differentiation
    n = 2 if k in (GroupKind.SO2, GroupKind.SE2) else 3
    C = m[:n, :n]
    if np.max(np.abs(C.T @ C - np.eye(n))) > tol:
        raise ContractViolationError(f"{k.label} rotation block is not orthonormal")
    if abs(np.linalg.det(C) - 1.0) > tol:
        raise ContractViolationError(f"{k.label} rotation block has determinant != +1")
    if k in (GroupKind.SO2, GroupKind.SO3):
        return
    bottom = np.zeros((k.matrix_dim - n, k.matrix_dim))
    bottom[:, n:] = np.eye(k.matrix_dim - n)
    if np.max(np.abs(m[n:, :] - bottom)) > tol:
        raise ContractViolationError(f"{k.label} bottom rows violate the group structure")


def action_dim(kind: GroupKind) -> int:
    """Dimension of the vector space the group acts on."""
    return 2 if kind in (GroupKind.SO2, GroupKind.SE2) else 3


def act(x: GroupElement, b: np.ndarray) -> np.ndarray:
    """Group action on R^n: rotation for SO(n), homogeneous-coordinate
    action (pad with [0...0, 1], multiply, strip) for SE(n) and SE_2(3)."""
    b = np.asarray(b)
    n = action_dim(x.kind)
    if b.shape != (n,):
        raise ContractViolationError(
            f"{x.kind.label} acts on {n}-vectors, got shape {b.shape}"
        )
    d = x.kind.matrix_dim
    if d == n:
        return x.matrix @ b
    padded = np.zeros(d, dtype=complex if np.iscomplexobj(b) else float)
    padded[:n] = b
    padded[-1] = 1.0
    return (x.matrix @ padded)[:n]


def rotation_block(x: GroupElement) -> np.ndarray:
    """Linear part of the group action: the map applied to difference
    vectors such as innovations (for SE(n) this is the rotation)."""
    n = action_dim(x.kind)
    return x.matrix[:n, :n]
