"""On-manifold MAP estimation as weighted nonlinear least squares.

The objective is the usual sum of a prior term, process terms and
measurement terms,

    0.5 ||X_0 (-) X0_prior||^2_P0
  + 0.5 sum_k ||X_k (-) f(X_{k-1}, u_{k-1})||^2_Q
  + 0.5 sum_k ||y_k - g(X_k)||^2_R,

expressed through :class:`ResidualTerm` objects whose residuals are
pre-whitened by the inverse Cholesky factor of their covariance. Problems
are solved by Gauss-Newton or Levenberg-Marquardt with full on-manifold
relinearization each iteration. Trajectory problems assemble a sparse
normal system (block tridiagonal plus unary terms); small problems fall
back to dense algebra.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .exceptions import ContractViolationError
from .models import ProcessModel, StampedInput, StampedMeasurement
from .states import GaussianBelief, ManifoldPoint, ominus, ominus_jacobians, oplus

__all__ = [
    "ResidualTerm",
    "BatchProblem",
    "SolverReport",
    "SolverOptions",
    "make_prior_term",
    "make_process_term",
    "make_measurement_term",
    "solve",
    "posterior_marginals",
]

_DENSE_VARIABLE_LIMIT = 50


def _whitener(covariance: np.ndarray) -> np.ndarray:
    """Lower-triangular W with W e = L^-1 e, L L^T = covariance."""
    cov = np.atleast_2d(np.asarray(covariance, dtype=float))
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ContractViolationError("term covariance must be positive definite") from exc
    return scipy.linalg.solve_triangular(L, np.eye(cov.shape[0]), lower=True)


class ResidualTerm:
    """One weighted error term; residuals and Jacobian blocks are whitened."""

    keys: tuple

    def evaluate(self, states: dict) -> np.ndarray:
        raise NotImplementedError

    def jacobians(self, states: dict) -> dict:
        raise NotImplementedError


class _PriorTerm(ResidualTerm):
    def __init__(self, key, prior: GaussianBelief):
        self.keys = (key,)
        self.prior = prior
        self._W = _whitener(prior.covariance)

    def evaluate(self, states):
        return self._W @ ominus(states[self.keys[0]], self.prior.mean)

    def jacobians(self, states):
        Jx, _ = ominus_jacobians(states[self.keys[0]], self.prior.mean)
        return {self.keys[0]: self._W @ Jx}


class _ProcessTerm(ResidualTerm):
    def __init__(self, key_prev, key_next, model: ProcessModel,
                 u: Optional[StampedInput], dt: float,
                 covariance: Optional[np.ndarray] = None):
        self.keys = (key_prev, key_next)
        self.model = model
        self.u = u
        self.dt = dt
        self._fixed_cov = covariance

    def _whitener_at(self, x_prev):
        cov = self._fixed_cov
        if cov is None:
            cov = self.model.covariance(x_prev, self.u, self.dt)
        return _whitener(cov)

    def evaluate(self, states):
        x_prev, x_next = states[self.keys[0]], states[self.keys[1]]
        predicted = self.model.evaluate(x_prev, self.u, self.dt)
        return self._whitener_at(x_prev) @ ominus(x_next, predicted)

    def jacobians(self, states):
        x_prev, x_next = states[self.keys[0]], states[self.keys[1]]
        predicted = self.model.evaluate(x_prev, self.u, self.dt)
        W = self._whitener_at(x_prev)
        J_next, J_pred = ominus_jacobians(x_next, predicted)
        F = self.model.jacobian(x_prev, self.u, self.dt)
        return {self.keys[0]: W @ J_pred @ F, self.keys[1]: W @ J_next}


class _MeasurementTerm(ResidualTerm):
    def __init__(self, key, meas: StampedMeasurement):
        self.keys = (key,)
        self.meas = meas

    def evaluate(self, states):
        x = states[self.keys[0]]
        W = _whitener(self.meas.model.covariance(x))
        return W @ (self.meas.value - self.meas.model.evaluate(x))

    def jacobians(self, states):
        x = states[self.keys[0]]
        W = _whitener(self.meas.model.covariance(x))
        return {self.keys[0]: -W @ self.meas.model.jacobian(x)}


def make_prior_term(key, prior: GaussianBelief) -> ResidualTerm:
    """Residual P0^{-T/2} (X (-) prior mean)."""
    return _PriorTerm(key, prior)


def make_process_term(key_prev, key_next, model: ProcessModel,
                      u: Optional[StampedInput], dt: float,
                      covariance: Optional[np.ndarray] = None) -> ResidualTerm:
    """Residual Q^{-T/2} (X_next (-) f(X_prev, u)); pass ``covariance`` to
    pin Q instead of re-evaluating the model's covariance at X_prev."""
    return _ProcessTerm(key_prev, key_next, model, u, dt, covariance)


def make_measurement_term(key, meas: StampedMeasurement) -> ResidualTerm:
    """Residual R^{-T/2} (y - g(X))."""
    return _MeasurementTerm(key, meas)


@dataclass
class BatchProblem:
    """An ordered set of variables plus the residual terms tying them."""

    variables: list
    terms: list

    def __post_init__(self):
        ids = [v.state_id for v in self.variables]
        if any(i is None for i in ids):
            raise ContractViolationError("every batch variable needs a state_id")
        if len(set(ids)) != len(ids):
            raise ContractViolationError("duplicate variable state_ids")
        known = set(ids)
        for t in self.terms:
            for k in t.keys:
                if k not in known:
                    raise ContractViolationError(f"term key {k!r} matches no variable")

    def dof(self) -> int:
        return sum(v.dof for v in self.variables)

    def slices(self) -> dict:
        out, start = {}, 0
        for v in self.variables:
            out[v.state_id] = slice(start, start + v.dof)
            start += v.dof
        return out


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 100
    gradient_tol: float = 1e-8
    step_tol: float = 1e-10
    compute_covariance: bool = False
    allow_underdetermined: bool = False
    lm_lambda_scale: float = 1e-4
    lm_lambda_max: float = 1e10
    debug_dump_dir: Optional[str] = None


@dataclass
class SolverReport:
    iterations: int
    initial_cost: float
    final_cost: float
    reason: str  # gradient-tol | step-tol | max-iters | stalled
    cost_trace: list = field(default_factory=list)


def _assemble(variables, terms, slices, total_dof, sparse: bool):
    states = {v.state_id: v for v in variables}
    residuals = []
    if sparse:
        rows_i, cols_i, vals = [], [], []
    row = 0
    blocks = []
    for t in terms:
        r = t.evaluate(states)
        residuals.append(r)
        jac = t.jacobians(states)
        for key, block in jac.items():
            s = slices[key]
            if sparse:
                ii, jj = np.meshgrid(
                    np.arange(row, row + block.shape[0]),
                    np.arange(s.start, s.stop),
                    indexing="ij",
                )
                rows_i.append(ii.ravel())
                cols_i.append(jj.ravel())
                vals.append(block.ravel())
            else:
                blocks.append((row, s, block))
        row += r.shape[0]
    r_full = np.concatenate(residuals)
    if sparse:
        J = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows_i), np.concatenate(cols_i))),
            shape=(row, total_dof),
        ).tocsr()
    else:
        J = np.zeros((row, total_dof))
        for r0, s, block in blocks:
            J[r0:r0 + block.shape[0], s] = block
    return r_full, J


def _solve_normal(H, g, sparse: bool):
    if sparse:
        return scipy.sparse.linalg.spsolve(H.tocsc(), g)
    return np.linalg.solve(H, g)


def _apply_step(variables, slices, dx):
    return [oplus(v, dx[slices[v.state_id]]) for v in variables]


def solve(problem: BatchProblem, method: str = "gauss-newton",
          options: SolverOptions = SolverOptions()):
    """Minimize the stacked whitened least-squares objective.

    Returns (variables, covariance or None, SolverReport). The optional
    posterior covariance is (J^T J)^{-1} at the solution (dense; opt-in
    because it is costly for long trajectories).
    """
    if method not in ("gauss-newton", "levenberg-marquardt"):
        raise ContractViolationError(f"unknown method {method!r}")
    total_dof = problem.dof()
    slices = problem.slices()
    variables = list(problem.variables)
    sparse = len(variables) >= _DENSE_VARIABLE_LIMIT

    r, J = _assemble(variables, problem.terms, slices, total_dof, sparse)
    if r.shape[0] < total_dof and not options.allow_underdetermined:
        warnings.warn(
            f"problem has {r.shape[0]} residuals for {total_dof} dof; "
            "solution may be underdetermined"
        )
    cost = 0.5 * float(r @ r)
    report = SolverReport(0, cost, cost, "max-iters", [cost])
    lam = None

    for it in range(1, options.max_iters + 1):
        g = J.T @ r
        if np.max(np.abs(g)) < options.gradient_tol:
            report.reason = "gradient-tol"
            break
        H = J.T @ J
        if method == "gauss-newton":
            try:
                dx = _solve_normal(H, -g, sparse)
            except Exception as exc:
                raise ContractViolationError(
                    "Gauss-Newton normal equations are singular; retry with "
                    "method='levenberg-marquardt'"
                ) from exc
            if not np.all(np.isfinite(dx)):
                raise ContractViolationError(
                    "Gauss-Newton normal equations are singular; retry with "
                    "method='levenberg-marquardt'"
                )
            variables = _apply_step(variables, slices, dx)
            r, J = _assemble(variables, problem.terms, slices, total_dof, sparse)
            cost = 0.5 * float(r @ r)
            report.iterations = it
            report.cost_trace.append(cost)
            if np.linalg.norm(dx) < options.step_tol:
                report.reason = "step-tol"
                break
        else:
            diag_mean = float(H.diagonal().mean())
            if lam is None:
                lam = options.lm_lambda_scale * max(diag_mean, np.finfo(float).tiny)
            eye = scipy.sparse.identity(total_dof, format="csr") if sparse \
                else np.eye(total_dof)
            accepted = False
            while lam <= options.lm_lambda_max:
                try:
                    dx = _solve_normal(H + lam * eye, -g, sparse)
                except Exception:
                    lam *= 10.0
                    continue
                candidate = _apply_step(variables, slices, dx)
                r_new, J_new = _assemble(candidate, problem.terms, slices,
                                         total_dof, sparse)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    variables, r, J, cost = candidate, r_new, J_new, cost_new
                    lam = max(lam / 10.0, 1e-12)
                    accepted = True
                    break
                lam *= 10.0
            report.iterations = it
            if not accepted:
                report.reason = "stalled"
                break
            report.cost_trace.append(cost)
            if np.linalg.norm(dx) < options.step_tol:
                report.reason = "step-tol"
                break

    report.final_cost = cost
    covariance = None
    if options.compute_covariance:
        H = J.T @ J
        H_dense = H.toarray() if sparse else H
        covariance = np.linalg.inv(H_dense)
    if options.debug_dump_dir is not None:
        _dump_debug(options.debug_dump_dir, report, J, sparse)
    return variables, covariance, report


def _dump_debug(out_dir: str, report: SolverReport, J, sparse: bool) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "cost_trace.csv"), "w") as fh:
        fh.write("iteration,cost\n")
        for i, c in enumerate(report.cost_trace):
            fh.write(f"{i},{c!r}\n")
    coo = J.tocoo() if sparse else scipy.sparse.coo_matrix(J)
    with open(os.path.join(out_dir, "jacobian_pattern.csv"), "w") as fh:
        fh.write("row,col\n")
        order = np.lexsort((coo.col, coo.row))
        for i in order:
            fh.write(f"{coo.row[i]},{coo.col[i]}\n")


def posterior_marginals(variables: Sequence[ManifoldPoint], terms: Sequence[ResidualTerm],
                        keys: Sequence) -> dict:
    """Marginal covariance blocks of selected variables at the current
    linearization point, from the inverse of the normal matrix."""
    problem = BatchProblem(list(variables), list(terms))
    slices = problem.slices()
    total_dof = problem.dof()
    sparse = len(variables) >= _DENSE_VARIABLE_LIMIT
    _, J = _assemble(list(variables), list(terms), slices, total_dof, sparse)
    H = J.T @ J
    out = {}
    if sparse:
        lu = scipy.sparse.linalg.splu(H.tocsc())
        for key in keys:
            s = slices[key]
            cols = np.zeros((total_dof, s.stop - s.start))
            cols[s, :] = np.eye(s.stop - s.start)
            sol = lu.solve(cols)
            out[key] = sol[s, :]
    else:
        H_inv = np.linalg.inv(H)
        for key in keys:
            s = slices[key]
            out[key] = H_inv[s, s]
    return out
