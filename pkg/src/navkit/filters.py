"""Stateless recursive estimators sharing one predict/correct interface.

Every function here is a pure function of its arguments: calling it twice
with equal inputs gives identical outputs, estimators can be switched
between timesteps, and per-mode or per-sigma-point work is reduced in a
fixed index order so results are reproducible.

Included: the extended Kalman filter, the iterated EKF (Gauss-Newton
correction), the invariant EKF (left/right invariant innovations),
sigma-point filters (unscented, spherical cubature, Gauss-Hermite),
on-manifold Gaussian mixture collapse, and the interacting multiple model
filter.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from . import liegroups as lg
from .exceptions import (
    ConfigurationError,
    ContractViolationError,
    SingularInnovationError,
)
from .models import (
    InvariantForm,
    MeasurementModel,
    ProcessModel,
    StampedInput,
    StampedMeasurement,
    _resolve_target,
)
from .states import (
    GaussianBelief,
    ManifoldPoint,
    Side,
    ominus,
    ominus_many,
    oplus,
    oplus_jacobian,
)

__all__ = [
    "Unscented",
    "SphericalCubature",
    "GaussHermite",
    "SigmaPointScheme",
    "GaussianMixture",
    "ImmBelief",
    "IteratedCorrection",
    "InvariantInnovation",
    "ekf_predict",
    "ekf_correct",
    "iterated_ekf_correct",
    "invariant_innovation",
    "invariant_ekf_correct",
    "generate_sigma_points",
    "spkf_predict",
    "spkf_correct",
    "mixture_collapse",
    "imm_step",
    "imm_combine",
]

_STAMP_TOL = 1e-9
_MAX_CONDITION = 1e12


# ---------------------------------------------------------------------------
# sigma point schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Unscented:
    kappa: float = 2.0


@dataclass(frozen=True)
class SphericalCubature:
    pass


@dataclass(frozen=True)
class GaussHermite:
    order: int = 3

    def __post_init__(self):
        if self.order < 1 or self.order % 2 == 0:
            raise ContractViolationError(
                f"Gauss-Hermite order must be odd and >= 1, got {self.order}"
            )


SigmaPointScheme = Union[Unscented, SphericalCubature, GaussHermite]


def generate_sigma_points(dim: int, scheme: SigmaPointScheme) -> tuple[np.ndarray, np.ndarray]:
    """Unit sigma points and weights reproducing standard-normal moments.

    Returns (points, weights) with points of shape (count, dim); the
    weighted mean is 0 and the weighted covariance is the identity.
    """
    if dim < 1:
        raise ContractViolationError(f"dimension must be >= 1, got {dim}")
    if isinstance(scheme, Unscented):
        spread = np.sqrt(dim + scheme.kappa)
        pts = np.vstack([np.zeros((1, dim)), spread * np.eye(dim), -spread * np.eye(dim)])
        w = np.full(2 * dim + 1, 1.0 / (2.0 * (dim + scheme.kappa)))
        w[0] = scheme.kappa / (dim + scheme.kappa)
        return pts, w
    if isinstance(scheme, SphericalCubature):
        spread = np.sqrt(dim)
        pts = np.vstack([spread * np.eye(dim), -spread * np.eye(dim)])
        return pts, np.full(2 * dim, 1.0 / (2.0 * dim))
    if isinstance(scheme, GaussHermite):
        nodes, weights = np.polynomial.hermite_e.hermegauss(scheme.order)
        weights = weights / np.sqrt(2.0 * np.pi)
        pts = np.array(list(itertools.product(nodes, repeat=dim)))
        w = np.prod(np.array(list(itertools.product(weights, repeat=dim))), axis=1)
        return pts, w
    raise ContractViolationError(f"unknown sigma point scheme {scheme!r}")


def _cholesky_with_jitter(P: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(P + 1e-12 * np.eye(P.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ContractViolationError(
            "covariance is not positive semidefinite (Cholesky failed "
            "even with 1e-12 jitter)"
        ) from exc


# ---------------------------------------------------------------------------
# EKF
# ---------------------------------------------------------------------------


def _require_stamp(belief: GaussianBelief) -> float:
    if belief.mean.stamp is None:
        raise ContractViolationError("filters require stamped states")
    return belief.mean.stamp


def _check_meas_stamp(belief: GaussianBelief, meas: StampedMeasurement) -> None:
    t = _require_stamp(belief)
    if abs(meas.stamp - t) > _STAMP_TOL:
        raise ContractViolationError(
            f"measurement stamp {meas.stamp} does not match belief stamp {t}"
        )


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return (P + P.T) / 2.0


def _check_condition(S: np.ndarray) -> None:
    if np.linalg.cond(S) > _MAX_CONDITION:
        raise SingularInnovationError(
            f"innovation covariance condition number exceeds {_MAX_CONDITION:.0e}"
        )


def ekf_predict(belief: GaussianBelief, model: ProcessModel,
                u: Optional[StampedInput], dt: float) -> GaussianBelief:
    """EKF prediction: mean through f, covariance F P F^T + Q."""
    _require_stamp(belief)
    if dt < 0:
        raise ContractViolationError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return belief
    F = model.jacobian(belief.mean, u, dt)
    Q = model.covariance(belief.mean, u, dt)
    mean = model.evaluate(belief.mean, u, dt)
    P = _symmetrize(F @ belief.covariance @ F.T + Q)
    return GaussianBelief(mean, P)


def _gain_and_innovation(belief: GaussianBelief, meas: StampedMeasurement):
    G = meas.model.jacobian(belief.mean)
    R = meas.model.covariance(belief.mean)
    z = meas.value - meas.model.evaluate(belief.mean)
    S = G @ belief.covariance @ G.T + R
    _check_condition(S)
    K = np.linalg.solve(S.T, G @ belief.covariance).T
    return K, G, z, S


def _apply_correction(belief: GaussianBelief, K, G, z, joseph: bool,
                      R: Optional[np.ndarray] = None) -> GaussianBelief:
    mean = oplus(belief.mean, K @ z)
    n = belief.dof
    if joseph:
        A = np.eye(n) - K @ G
        P = A @ belief.covariance @ A.T
        if R is not None:
            P = P + K @ R @ K.T
    else:
        P = (np.eye(n) - K @ G) @ belief.covariance
    return GaussianBelief(mean, _symmetrize(P))


def ekf_correct(belief: GaussianBelief, meas: StampedMeasurement,
                joseph: bool = False) -> GaussianBelief:
    """EKF correction with innovation z = y - g(X)."""
    _check_meas_stamp(belief, meas)
    K, G, z, _ = _gain_and_innovation(belief, meas)
    R = meas.model.covariance(belief.mean) if joseph else None
    return _apply_correction(belief, K, G, z, joseph, R)


def _log_likelihood(z: np.ndarray, S: np.ndarray) -> float:
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0:
        return -np.inf
    return float(-0.5 * (z @ np.linalg.solve(S, z) + logdet + z.shape[0] * np.log(2.0 * np.pi)))


# ---------------------------------------------------------------------------
# iterated EKF
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IteratedCorrection:
    belief: GaussianBelief
    converged: bool
    iterations: int
    final_step_norm: float


def iterated_ekf_correct(belief: GaussianBelief, meas: StampedMeasurement,
                         max_iters: int = 50, tol: float = 1e-10) -> IteratedCorrection:
    """Gauss-Newton correction: relinearize the measurement and the prior
    about the current iterate until the update step is below tol.

    With a linear measurement model the first step reproduces the plain EKF
    correction exactly. On non-convergence the best iterate is returned
    with ``converged`` False.
    """
    _check_meas_stamp(belief, meas)
    predicted = belief.mean
    P = belief.covariance
    estimate = predicted
    converged = False
    step_norm = np.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        G = meas.model.jacobian(estimate)
        R = meas.model.covariance(estimate)
        e = ominus(estimate, predicted)
        J = oplus_jacobian(predicted, e)
        M = J @ P @ J.T
        S = G @ M @ G.T + R
        _check_condition(S)
        K = np.linalg.solve(S.T, G @ M.T).T
        z = meas.value - meas.model.evaluate(estimate) + G @ (J @ e)
        dx = K @ z - J @ e
        estimate = oplus(estimate, dx)
        step_norm = float(np.linalg.norm(dx))
        if step_norm < tol:
            converged = True
            break
    G = meas.model.jacobian(estimate)
    e = ominus(estimate, predicted)
    J = oplus_jacobian(predicted, e)
    M = J @ P @ J.T
    S = G @ M @ G.T + meas.model.covariance(estimate)
    K = np.linalg.solve(S.T, G @ M.T).T
    P_new = _symmetrize((np.eye(belief.dof) - K @ G) @ M)
    return IteratedCorrection(GaussianBelief(estimate, P_new), converged,
                              iterations, step_norm)


# ---------------------------------------------------------------------------
# invariant EKF
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvariantInnovation:
    value: np.ndarray
    jacobian: np.ndarray
    noise_covariance: np.ndarray


def invariant_innovation(belief: GaussianBelief,
                         meas: StampedMeasurement) -> InvariantInnovation:
    """Transformed innovation for invariant measurement models.

    Right-invariant models (y = X^-1 . b) pair with the left perturbation
    convention and use z = X . (y - g(X)); left-invariant models
    (y = X . b) pair with the right convention and use z = X^-1 . (y - g(X)).
    Under the matched pairing the returned Jacobian is state independent.
    """
    form = meas.model.invariant_form
    if form is None:
        raise ConfigurationError("measurement model declares no invariant form")
    target_id = getattr(meas.model, "target_state_id", None)
    pose, _ = _resolve_target(belief.mean, target_id)
    if not pose.is_group:
        raise ConfigurationError("invariant innovations need a group state")
    side = pose.side
    if form is InvariantForm.RIGHT and side != Side.LEFT:
        raise ConfigurationError(
            "right-invariant measurement models require the left perturbation "
            "convention (state uses right)"
        )
    if form is InvariantForm.LEFT and side != Side.RIGHT:
        raise ConfigurationError(
            "left-invariant measurement models require the right perturbation "
            "convention (state uses left)"
        )
    elem = pose.value if form is InvariantForm.RIGHT else lg.inverse(pose.value)
    A = lg.rotation_block(elem)
    G = meas.model.jacobian(belief.mean)
    R = meas.model.covariance(belief.mean)
    z = A @ (meas.value - meas.model.evaluate(belief.mean))
    return InvariantInnovation(z, A @ G, _symmetrize(A @ R @ A.T))


def invariant_ekf_correct(belief: GaussianBelief,
                          meas: StampedMeasurement) -> GaussianBelief:
    """Correction using the invariant innovation when the model declares an
    invariant form; falls back to the standard EKF correction otherwise."""
    _check_meas_stamp(belief, meas)
    if meas.model.invariant_form is None:
        return ekf_correct(belief, meas)
    inn = invariant_innovation(belief, meas)
    Z = inn.jacobian
    S = Z @ belief.covariance @ Z.T + inn.noise_covariance
    _check_condition(S)
    K = np.linalg.solve(S.T, Z @ belief.covariance).T
    return _apply_correction(belief, K, Z, inn.value, joseph=False)


# ---------------------------------------------------------------------------
# sigma-point filters
# ---------------------------------------------------------------------------


def _weighted_mean(points: Sequence[ManifoldPoint], weights: np.ndarray,
                   tol: float = 1e-10, max_iters: int = 100) -> ManifoldPoint:
    """Iterated on-manifold weighted mean, initialized at the first point."""
    mean = points[0]
    for _ in range(max_iters):
        delta = weights @ ominus_many(points, mean)
        mean = oplus(mean, delta)
        if np.linalg.norm(delta) < tol:
            break
    return mean


def spkf_predict(belief: GaussianBelief, model: ProcessModel,
                 u: Optional[StampedInput], dt: float,
                 scheme: SigmaPointScheme) -> GaussianBelief:
    """Sigma-point prediction.

    When the input carries a noise covariance, sigma points are drawn
    jointly over the state and the input (Cholesky of diag(P, Q^u)) and the
    noise enters through the propagated inputs. Otherwise sigma points
    cover the state only and the model's process covariance is added to the
    propagated spread (state-additive noise, e.g. preintegrated models).
    """
    _require_stamp(belief)
    if dt < 0:
        raise ContractViolationError(f"dt must be >= 0, got {dt}")
    if dt == 0:
        return belief
    n = belief.dof
    joint = u is not None and u.covariance is not None
    if joint:
        p = u.dof
        L = _cholesky_with_jitter(
            np.block([
                [belief.covariance, np.zeros((n, p))],
                [np.zeros((p, n)), u.covariance],
            ])
        )
        pts, w = generate_sigma_points(n + p, scheme)
        propagated = []
        for xi in pts:
            d = L @ xi
            x_i = oplus(belief.mean, d[:n])
            u_i = StampedInput(u.value + d[n:], u.stamp)
            propagated.append(model.evaluate(x_i, u_i, dt))
    else:
        L = _cholesky_with_jitter(belief.covariance)
        pts, w = generate_sigma_points(n, scheme)
        propagated = [model.evaluate(oplus(belief.mean, L @ xi), u, dt) for xi in pts]
    mean = _weighted_mean(propagated, w)
    deltas = ominus_many(propagated, mean)
    P = (deltas.T * w) @ deltas
    if not joint:
        P = P + model.covariance(belief.mean, u, dt)
    return GaussianBelief(mean, _symmetrize(P))


def spkf_correct(belief: GaussianBelief, meas: StampedMeasurement,
                 scheme: SigmaPointScheme) -> GaussianBelief:
    """Sigma-point correction; points are generated for the state only
    since measurement noise is additive."""
    _check_meas_stamp(belief, meas)
    n = belief.dof
    L = _cholesky_with_jitter(belief.covariance)
    pts, w = generate_sigma_points(n, scheme)
    deltas = pts @ L.T
    ys = np.array([meas.model.evaluate(oplus(belief.mean, d)) for d in deltas])
    y_bar = w @ ys
    dy = ys - y_bar
    R = meas.model.covariance(belief.mean)
    P_yy = (dy.T * w) @ dy + R
    _check_condition(P_yy)
    P_xy = (deltas.T * w) @ dy
    K = np.linalg.solve(P_yy.T, P_xy.T).T
    mean = oplus(belief.mean, K @ (meas.value - y_bar))
    P = _symmetrize(belief.covariance - K @ P_yy @ K.T)
    return GaussianBelief(mean, P)


# ---------------------------------------------------------------------------
# Gaussian mixtures and the IMM
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weighted Gaussian components sharing one state structure."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ContractViolationError("mixture needs at least one component")
        weights = np.array([w for w, _ in comps], dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ContractViolationError("mixture weights must be >= 0 and sum to 1")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def beliefs(self) -> tuple:
        return tuple(b for _, b in self.components)


def mixture_collapse(mix: GaussianMixture) -> GaussianBelief:
    """Moment-match a mixture into one Gaussian.

    Components are reparametrized about the highest-weight component
    (ties: lowest index), combined in that tangent space in a single pass,
    and each component covariance is transported to the collapsed mean's
    tangent space through the inverse group Jacobian of its offset.
    A single-component mixture is returned unchanged.
    """
    comps = mix.components
    if len(comps) == 1:
        return comps[0][1]
    weights = mix.weights
    anchor = comps[int(np.argmax(weights))][1].mean
    shift = np.zeros(anchor.dof)
    for w, b in comps:
        shift += w * ominus(b.mean, anchor)
    mean = oplus(anchor, shift)
    deltas = [ominus(b.mean, mean) for _, b in comps]
    delta_bar = np.einsum("i,ij->j", weights, np.array(deltas))
    P = np.zeros((anchor.dof, anchor.dof))
    for w, (_, b), d in zip(weights, comps, deltas):
        J = oplus_jacobian(mean, d)
        transported = np.linalg.solve(J, np.linalg.solve(J, b.covariance.T).T)
        dd = d - delta_bar
        P += w * (transported + np.outer(dd, dd))
    return GaussianBelief(mean, _symmetrize(P))


@dataclass(frozen=True, eq=False)
class ImmBelief:
    """Bank of mode-matched beliefs plus Markov-chain mode probabilities."""

    mode_beliefs: tuple
    mode_probabilities: np.ndarray
    transition_matrix: np.ndarray

    def __post_init__(self):
        beliefs = tuple(self.mode_beliefs)
        probs = np.array(self.mode_probabilities, dtype=float)
        trans = np.array(self.transition_matrix, dtype=float)
        n = len(beliefs)
        if probs.shape != (n,) or abs(probs.sum() - 1.0) > 1e-10 or np.any(probs < 0):
            raise ContractViolationError("mode probabilities must be a distribution")
        if trans.shape != (n, n) or np.max(np.abs(trans.sum(axis=1) - 1.0)) > 1e-10:
            raise ContractViolationError("transition matrix must be row stochastic")
        probs.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "mode_beliefs", beliefs)
        object.__setattr__(self, "mode_probabilities", probs)
        object.__setattr__(self, "transition_matrix", trans)

    @property
    def n_modes(self) -> int:
        return len(self.mode_beliefs)


def imm_step(belief: ImmBelief, models: Sequence[ProcessModel],
             u: Optional[StampedInput], meas: Optional[StampedMeasurement],
             dt: float) -> ImmBelief:
    """One IMM cycle: Markov mixing, per-mode EKF predict (and correct when
    a measurement is present), and mode probability update from Gaussian
    measurement likelihoods in innovation space."""
    n = belief.n_modes
    if len(models) != n:
        raise ContractViolationError(f"expected {n} process models, got {len(models)}")
    trans = belief.transition_matrix
    mu = belief.mode_probabilities
    c_bar = trans.T @ mu

    new_beliefs = []
    log_liks = np.zeros(n)
    for j in range(n):
        if c_bar[j] > 0.0:
            mix_w = trans[:, j] * mu / c_bar[j]
        else:
            mix_w = np.full(n, 1.0 / n)  # mode unreachable; weights are moot
        mixed = mixture_collapse(GaussianMixture(
            tuple((mix_w[i], belief.mode_beliefs[i]) for i in range(n))
        ))
        predicted = ekf_predict(mixed, models[j], u, dt)
        if meas is not None:
            K, G, z, S = _gain_and_innovation(predicted, meas)
            log_liks[j] = _log_likelihood(z, S)
            new_beliefs.append(_apply_correction(predicted, K, G, z, joseph=False))
        else:
            new_beliefs.append(predicted)

    if meas is None:
        probs = c_bar
    else:
        with np.errstate(divide="ignore"):
            log_w = np.where(c_bar > 0.0, np.log(c_bar), -np.inf) + log_liks
        peak = np.max(log_w)
        if not np.isfinite(peak):
            warnings.warn("all IMM mode likelihoods underflowed; keeping "
                          "mixing probabilities")
            probs = c_bar
        else:
            w = np.exp(log_w - peak)
            probs = w / w.sum()
    return ImmBelief(tuple(new_beliefs), probs, trans)


def imm_combine(belief: ImmBelief) -> GaussianBelief:
    """Collapse the mode bank into a single output belief."""
    return mixture_collapse(GaussianMixture(
        tuple((float(w), b) for w, b in zip(belief.mode_probabilities,
                                            belief.mode_beliefs))
    ))
