"""Simulation support, interpolation, Monte-Carlo orchestration and
consistency metrics (NEES, error norms), with CSV and SVG emission.

The Monte-Carlo runner is deterministic: each trial draws from its own RNG
stream derived from (seed, trial index), so results are bitwise
reproducible regardless of scheduling, and the simulated truth and data do
not depend on the estimator under test.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import chi2

from .exceptions import ContractViolationError
from .states import GaussianBelief, ManifoldPoint, ominus, oplus

__all__ = [
    "TrajectoryTrace",
    "ConsistencyReport",
    "interpolate",
    "nees",
    "chi_square_envelope",
    "run_monte_carlo",
    "aggregate_reports",
    "write_report_csv",
    "svg_line_plot",
]


def interpolate(x_a: ManifoldPoint, x_b: ManifoldPoint, t: float,
                extrapolate: bool = False) -> ManifoldPoint:
    """State interpolation x_a (+) alpha (x_b (-) x_a) at time t.

    Works for any state with well-defined plus/minus; exact at the
    endpoints. Pass ``extrapolate=True`` to allow t outside the stamps.
    """
    if x_a.stamp is None or x_b.stamp is None:
        raise ContractViolationError("interpolation needs stamped states")
    if x_b.stamp <= x_a.stamp:
        raise ContractViolationError("interpolation stamps must be increasing")
    if not extrapolate and not (x_a.stamp - 1e-12 <= t <= x_b.stamp + 1e-12):
        raise ContractViolationError(
            f"t={t} outside [{x_a.stamp}, {x_b.stamp}] (pass extrapolate=True)"
        )
    alpha = (t - x_a.stamp) / (x_b.stamp - x_a.stamp)
    if alpha == 0.0:
        return x_a.with_stamp(t)
    return oplus(x_a, alpha * ominus(x_b, x_a)).with_stamp(t)


def nees(belief: GaussianBelief, truth: ManifoldPoint) -> float:
    """Normalized estimation error squared, e^T P^-1 e with
    e = mean (-) truth taken in the belief's tangent space. Averages to the
    state dof for a consistent estimator."""
    e = ominus(belief.mean, truth)
    P = belief.covariance
    try:
        u = np.linalg.solve(P, e)
    except np.linalg.LinAlgError:
        warnings.warn("singular covariance in NEES; using pseudo-inverse")
        u = np.linalg.pinv(P) @ e
    return float(e @ u)


def chi_square_envelope(dof: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Two-sided confidence bounds on the trial-averaged NEES: quantiles of
    chi-square(trials * dof) scaled by 1/trials."""
    if dof < 1 or trials < 1:
        raise ContractViolationError("dof and trials must be >= 1")
    if not 0.0 < level < 1.0:
        raise ContractViolationError("level must be in (0, 1)")
    lower = chi2.ppf((1.0 - level) / 2.0, trials * dof) / trials
    upper = chi2.ppf((1.0 + level) / 2.0, trials * dof) / trials
    return float(lower), float(upper)


@dataclass
class TrajectoryTrace:
    """Estimates against truth along one run (strictly increasing stamps)."""

    stamps: np.ndarray
    true_states: list
    beliefs: list

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float)
        if np.any(np.diff(self.stamps) <= 0):
            raise ContractViolationError("trace stamps must be strictly increasing")
        if not (len(self.stamps) == len(self.true_states) == len(self.beliefs)):
            raise ContractViolationError("trace fields must have equal length")


@dataclass
class ConsistencyReport:
    """Per-step NEES and errors for one trial (or a trial average)."""

    stamps: np.ndarray
    nees_values: np.ndarray
    errors: np.ndarray          # (steps, dof) signed tangent errors
    error_norms: np.ndarray     # position-block error norms
    dof: int
    trials: int
    level: float
    nees_lower: float
    nees_upper: float
    failed: bool = False

    @property
    def average_nees(self) -> float:
        return float(np.mean(self.nees_values))


def _error_norm(errors: np.ndarray, dof: int) -> np.ndarray:
    """Norm of the translation block when the state looks like a pose
    ([rotation; translation] tangent), else the full error norm."""
    if dof == 6:
        return np.linalg.norm(errors[:, 3:6], axis=1)
    if dof == 9:
        return np.linalg.norm(errors[:, 6:9], axis=1)
    return np.linalg.norm(errors, axis=1)


def consistency_report(trace: TrajectoryTrace, level: float = 0.95,
                       failed: bool = False) -> ConsistencyReport:
    dof = trace.beliefs[0].dof
    errors = np.array([ominus(b.mean, x) for b, x in zip(trace.beliefs, trace.true_states)])
    values = np.array([nees(b, x) for b, x in zip(trace.beliefs, trace.true_states)])
    lower, upper = chi_square_envelope(dof, 1, level)
    return ConsistencyReport(
        stamps=trace.stamps,
        nees_values=values,
        errors=errors,
        error_norms=_error_norm(errors, dof),
        dof=dof,
        trials=1,
        level=level,
        nees_lower=lower,
        nees_upper=upper,
        failed=failed,
    )


def run_monte_carlo(scenario, estimator, trials: int, seed: int,
                    level: float = 0.95) -> list:
    """Run ``trials`` independent simulations of ``scenario`` through
    ``estimator`` and report per-trial consistency.

    ``scenario.generate(rng)`` must produce a simulated trial (truth,
    noisy inputs, measurements, initial belief) and ``estimator.run(trial)``
    a :class:`TrajectoryTrace`. Trial t draws from the RNG stream seeded by
    (seed, t). A trial whose estimate turns non-finite is marked failed and
    the run continues.
    """
    if trials < 1:
        raise ContractViolationError("trials must be >= 1")
    reports = []
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, t)))
        trial = scenario.generate(rng)
        try:
            trace = estimator.run(trial)
            bad = not all(np.all(np.isfinite(b.covariance)) for b in trace.beliefs)
        except (np.linalg.LinAlgError, FloatingPointError):
            bad = True
            trace = None
        if trace is not None and not bad:
            reports.append(consistency_report(trace, level))
        else:
            reports.append(ConsistencyReport(
                stamps=np.array([0.0]), nees_values=np.array([np.nan]),
                errors=np.zeros((1, 1)), error_norms=np.array([np.nan]),
                dof=0, trials=1, level=level, nees_lower=0.0, nees_upper=0.0,
                failed=True,
            ))
    return reports


def aggregate_reports(reports: Sequence[ConsistencyReport],
                      level: float = 0.95) -> ConsistencyReport:
    """Average per-step NEES across trials (failed trials excluded) and
    attach the matching chi-square envelope. Per-step errors become RMS
    across trials when more than one trial contributed."""
    good = [r for r in reports if not r.failed]
    if not good:
        raise ContractViolationError("all trials failed; nothing to aggregate")
    n = len(good)
    stamps = good[0].stamps
    for r in good[1:]:
        if r.stamps.shape != stamps.shape or np.max(np.abs(r.stamps - stamps)) > 1e-9:
            raise ContractViolationError("trials have mismatched stamps")
    nees_avg = np.mean([r.nees_values for r in good], axis=0)
    if n == 1:
        errors = good[0].errors
    else:
        errors = np.sqrt(np.mean([r.errors ** 2 for r in good], axis=0))
    error_norms = np.sqrt(np.mean([r.error_norms ** 2 for r in good], axis=0))
    dof = good[0].dof
    lower, upper = chi_square_envelope(dof, n, level)
    return ConsistencyReport(
        stamps=stamps,
        nees_values=nees_avg,
        errors=errors,
        error_norms=error_norms,
        dof=dof,
        trials=n,
        level=level,
        nees_lower=lower,
        nees_upper=upper,
    )


def write_report_csv(report: ConsistencyReport, path: str) -> None:
    """One row per step: t, error_norm, nees, nees_lower, nees_upper, then
    the per-dof errors."""
    dof = report.errors.shape[1]
    header = "t,error_norm,nees,nees_lower,nees_upper," + ",".join(
        f"err_{i}" for i in range(dof)
    )
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k in range(len(report.stamps)):
            row = [report.stamps[k], report.error_norms[k], report.nees_values[k],
                   report.nees_lower, report.nees_upper, *report.errors[k]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# minimal self-contained SVG plotting
# ---------------------------------------------------------------------------


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    start = np.ceil(lo / step) * step
    return list(np.arange(start, hi + step / 2, step))


def svg_line_plot(path: str, x: np.ndarray, series: dict, title: str,
                  xlabel: str, ylabel: str, hlines: Sequence[float] = ()) -> None:
    """Write a small standalone SVG line plot (one polyline per series)."""
    width, height = 720, 420
    ml, mr, mt, mb = 70, 20, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    x = np.asarray(x, dtype=float)
    all_y = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    all_y = all_y[np.isfinite(all_y)]
    if all_y.size == 0:
        all_y = np.array([0.0, 1.0])
    y_lo = min(float(np.min(all_y)), min(hlines) if hlines else np.inf)
    y_hi = max(float(np.max(all_y)), max(hlines) if hlines else -np.inf)
    pad = 0.05 * (y_hi - y_lo if y_hi > y_lo else 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    x_lo, x_hi = float(np.min(x)), float(np.max(x))
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v):
        return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="22" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(tx):.2f}" y1="{mt+ph}" x2="{sx(tx):.2f}" '
                     f'y2="{mt+ph+5}" stroke="black"/>')
        parts.append(f'<text x="{sx(tx):.2f}" y="{mt+ph+18}" text-anchor="middle" '
                     f'font-size="11" font-family="sans-serif">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{ml-5}" y1="{sy(ty):.2f}" x2="{ml}" '
                     f'y2="{sy(ty):.2f}" stroke="black"/>')
        parts.append(f'<text x="{ml-8}" y="{sy(ty)+4:.2f}" text-anchor="end" '
                     f'font-size="11" font-family="sans-serif">{ty:g}</text>')
    parts.append(f'<text x="{ml+pw/2:.1f}" y="{height-10}" text-anchor="middle" '
                 f'font-size="13" font-family="sans-serif">{xlabel}</text>')
    parts.append(f'<text x="18" y="{mt+ph/2:.1f}" text-anchor="middle" '
                 f'font-size="13" font-family="sans-serif" '
                 f'transform="rotate(-90 18 {mt+ph/2:.1f})">{ylabel}</text>')
    for h in hlines:
        parts.append(f'<line x1="{ml}" y1="{sy(h):.2f}" x2="{ml+pw}" '
                     f'y2="{sy(h):.2f}" stroke="#777777" stroke-width="1" '
                     f'stroke-dasharray="6 4"/>')
    for i, (name, ys) in enumerate(series.items()):
        ys = np.asarray(ys, dtype=float)
        pts = " ".join(
            f"{sx(xv):.2f},{sy(yv):.2f}" for xv, yv in zip(x, ys) if np.isfinite(yv)
        )
        color = colors[i % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{ml+pw-8}" y="{mt+16+14*i}" text-anchor="end" '
                     f'font-size="12" font-family="sans-serif" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
