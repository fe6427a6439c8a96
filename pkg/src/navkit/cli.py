"""Command-line runner for the three-anchor SE(3) ranging scenario and
generic scenario experiments.

A JSON config declares the trajectory, anchors, rates and noise levels;
``navkit run`` simulates Monte-Carlo trials, runs the chosen estimator and
writes ``trace_<filter>.csv``, ``error_norm.svg``, ``nees.svg`` and
``summary.json`` into the output directory. The CLI is a thin shell over
the library: everything it does is reachable through the Python API with
identical results.

Exit codes: 0 success, 2 configuration error, 3 estimator divergence in
all trials.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import batch, evaluation, filters, liegroups as lg, models, preintegration
from .exceptions import ConfigurationError, ContractViolationError
from .states import GaussianBelief, ManifoldPoint, Side, group_state

__all__ = ["ScenarioConfig", "SimulatedTrial", "EstimatorChoice",
           "build_estimator", "run_scenario", "list_filters", "main",
           "FILTER_NAMES"]


FILTER_NAMES = {
    "ekf": "extended Kalman filter",
    "iterekf": "iterated EKF (Gauss-Newton correction)",
    "invariant-left": "invariant EKF, left-invariant measurements (right perturbation)",
    "invariant-right": "invariant EKF, right-invariant measurements (left perturbation)",
    "ukf": "unscented sigma-point filter (kappa = 2)",
    "ckf": "spherical cubature sigma-point filter",
    "ghkf": "Gauss-Hermite sigma-point filter (order 3)",
    "batch": "batch MAP smoother (Gauss-Newton over the trajectory)",
    "imm": "interacting multiple model filter (two process-noise modes)",
}

_SIGMA_SCHEMES = {
    "ukf": filters.Unscented(kappa=2.0),
    "ckf": filters.SphericalCubature(),
    "ghkf": filters.GaussHermite(order=3),
}


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------


@dataclass
class InputProfile:
    """Named input generator. ``sinusoid`` produces
    offset + amplitude * sin(2 pi f t + phase) per axis; ``constant`` uses
    the offset only."""

    name: str = "sinusoid"
    offset: np.ndarray = field(default_factory=lambda: np.zeros(6))
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(6))
    frequency_hz: np.ndarray = field(default_factory=lambda: np.zeros(6))
    phase_rad: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        for attr in ("offset", "amplitude", "frequency_hz", "phase_rad"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float))
        if self.name not in ("sinusoid", "constant"):
            raise ContractViolationError(f"unknown input profile {self.name!r}")

    def __call__(self, t: float) -> np.ndarray:
        if self.name == "constant":
            return self.offset.copy()
        return self.offset + self.amplitude * np.sin(
            2.0 * np.pi * self.frequency_hz * t + self.phase_rad
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "offset": list(self.offset),
            "amplitude": list(self.amplitude),
            "frequency_hz": list(self.frequency_hz),
            "phase_rad": list(self.phase_rad),
        }


@dataclass
class SimulatedTrial:
    """One simulated run: truth at the input rate, noisy inputs, stacked
    per-epoch measurements, and the initial belief."""

    dt: float
    stamps: np.ndarray
    truth: list
    inputs: list
    epochs: list          # (step index into stamps, [StampedMeasurement, ...])
    initial_belief: GaussianBelief


@dataclass
class ScenarioConfig:
    """Three-anchor ranging scenario on SE(3). Field names carry units."""

    duration_s: float = 60.0
    input_rate_hz: float = 100.0
    measurement_rate_hz: float = 10.0
    anchors: list = field(default_factory=lambda: [
        [10.0, 0.0, 1.0], [-5.0, 8.0, 2.0], [-5.0, -8.0, 0.0],
    ])
    input_profile: InputProfile = field(default_factory=InputProfile)
    input_noise_diag: np.ndarray = field(
        default_factory=lambda: np.full(6, 1e-4))
    range_variance: float = 0.01
    initial_axis_angle: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_covariance_diag: np.ndarray = field(
        default_factory=lambda: np.concatenate([np.full(3, 4e-4), np.full(3, 1e-2)]))
    perturbation_side: str = Side.RIGHT
    measurement_type: str = "range"

    def __post_init__(self):
        self.anchors = [np.asarray(a, dtype=float) for a in self.anchors]
        self.input_noise_diag = np.asarray(self.input_noise_diag, dtype=float)
        self.initial_axis_angle = np.asarray(self.initial_axis_angle, dtype=float)
        self.initial_position = np.asarray(self.initial_position, dtype=float)
        self.initial_covariance_diag = np.asarray(self.initial_covariance_diag,
                                                  dtype=float)
        if self.duration_s <= 0 or self.input_rate_hz <= 0 or self.measurement_rate_hz <= 0:
            raise ContractViolationError("duration and rates must be > 0")
        if not self.anchors:
            raise ContractViolationError("need at least one anchor")
        if any(a.shape != (3,) for a in self.anchors):
            raise ContractViolationError("anchors must be 3-vectors")
        ratio = self.input_rate_hz / self.measurement_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ContractViolationError(
                "input rate must be an integer multiple of the measurement rate"
            )
        if np.any(self.input_noise_diag < 0) or np.any(self.initial_covariance_diag < 0):
            raise ContractViolationError("noise variances must be >= 0")
        if np.isscalar(self.range_variance) and self.range_variance <= 0:
            raise ContractViolationError("range variance must be > 0")
        if self.perturbation_side not in (Side.RIGHT, Side.LEFT):
            raise ContractViolationError("perturbation_side must be 'right' or 'left'")
        if self.measurement_type not in ("range", "anchor_body_frame"):
            raise ContractViolationError(
                "measurement_type must be 'range' or 'anchor_body_frame'"
            )

    # -- serialization ------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "input_profile" in d:
            d["input_profile"] = InputProfile(**d["input_profile"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "input_rate_hz": self.input_rate_hz,
            "measurement_rate_hz": self.measurement_rate_hz,
            "anchors": [list(a) for a in self.anchors],
            "input_profile": self.input_profile.to_dict(),
            "input_noise_diag": list(self.input_noise_diag),
            "range_variance": self.range_variance,
            "initial_axis_angle": list(self.initial_axis_angle),
            "initial_position": list(self.initial_position),
            "initial_covariance_diag": list(self.initial_covariance_diag),
            "perturbation_side": self.perturbation_side,
            "measurement_type": self.measurement_type,
        }

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    # -- model construction -------------------------------------------------

    def range_variances(self) -> list:
        if np.isscalar(self.range_variance):
            return [float(self.range_variance)] * len(self.anchors)
        return [float(v) for v in self.range_variance]

    def measurement_models(self) -> list:
        variances = self.range_variances()
        if self.measurement_type == "range":
            return [models.RangeToAnchor(a, v) for a, v in zip(self.anchors, variances)]
        return [
            models.InvariantPointMeasurement(a, models.InvariantForm.RIGHT,
                                             v * np.eye(3))
            for a, v in zip(self.anchors, variances)
        ]

    def initial_state(self) -> ManifoldPoint:
        pose = np.eye(4)
        pose[:3, :3] = lg.exp_map(
            lg.TangentVector(lg.GroupKind.SO3, self.initial_axis_angle)).matrix
        pose[:3, 3] = self.initial_position
        return group_state(lg.GroupElement(lg.GroupKind.SE3, pose),
                           side=self.perturbation_side, stamp=0.0)

    # -- simulation ----------------------------------------------------------

    def generate(self, rng: np.random.Generator) -> SimulatedTrial:
        """Simulate one trial: the truth is dead-reckoned from the noiseless
        input profile (estimator independent); inputs and measurements are
        then corrupted per the configured covariances; the initial belief
        mean is the true initial state perturbed consistently with the
        initial covariance."""
        dt = 1.0 / self.input_rate_hz
        n_steps = int(round(self.duration_s * self.input_rate_hz))
        every = int(round(self.input_rate_hz / self.measurement_rate_hz))
        process = models.BodyVelocityProcess()
        meas_models = self.measurement_models()
        q_u = np.diag(self.input_noise_diag)
        sqrt_qu = np.sqrt(self.input_noise_diag)
        variances = self.range_variances()

        stamps = np.arange(n_steps + 1) * dt
        truth = [self.initial_state()]
        u_true = []
        for k in range(n_steps):
            u = models.StampedInput(self.input_profile(stamps[k]), stamps[k])
            u_true.append(u)
            truth.append(process.evaluate(truth[-1], u, dt))

        # fixed draw order: input noise, measurement noise, initial offset
        input_noise = rng.standard_normal((n_steps, 6)) * sqrt_qu
        inputs = [
            models.StampedInput(u.value + input_noise[k], u.stamp, q_u)
            for k, u in enumerate(u_true)
        ]
        epochs = []
        for step in range(every, n_steps + 1, every):
            stamped = []
            for m, v in zip(meas_models, variances):
                clean = m.evaluate(truth[step])
                noise = rng.standard_normal(m.dim) * np.sqrt(v)
                stamped.append(models.StampedMeasurement(clean + noise,
                                                         stamps[step], m))
            epochs.append((step, stamped))
        offset = rng.standard_normal(6) * np.sqrt(self.initial_covariance_diag)
        from .states import oplus
        mean0 = oplus(truth[0], offset)
        belief0 = GaussianBelief(mean0, np.diag(self.initial_covariance_diag))
        return SimulatedTrial(dt, stamps, truth, inputs, epochs, belief0)


# ---------------------------------------------------------------------------
# estimator pipelines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorChoice:
    """A named estimator plus its parameters."""

    name: str
    preintegrate: bool = False


class _ScaledNoiseProcess(models.ProcessModel):
    """Delegates to an inner process model with the noise scaled; the IMM
    modes hypothesize different process noise levels."""

    def __init__(self, inner: models.ProcessModel, scale: float):
        self.inner = inner
        self.scale = scale

    def evaluate(self, x, u, dt):
        return self.inner.evaluate(x, u, dt)

    def jacobian(self, x, u, dt):
        return self.inner.jacobian(x, u, dt)

    def covariance(self, x, u, dt):
        return self.scale * self.inner.covariance(x, u, dt)


def _trace_from_records(records) -> evaluation.TrajectoryTrace:
    stamps = np.array([r[0] for r in records])
    return evaluation.TrajectoryTrace(
        stamps, [r[1] for r in records], [r[2] for r in records]
    )


class RecursiveEstimator:
    """Predict at the input rate (or once per epoch over a preintegrated
    increment) and correct with each measurement; records epoch beliefs."""

    def __init__(self, name: str, predict: Callable, correct: Callable,
                 preintegrate: bool = False):
        self.name = name
        self._predict = predict
        self._correct = correct
        self.preintegrate = preintegrate

    def run(self, trial: SimulatedTrial) -> evaluation.TrajectoryTrace:
        process = models.BodyVelocityProcess()
        belief = trial.initial_belief
        records = []
        if self.preintegrate:
            prev = 0
            for step, meas_list in trial.epochs:
                kind = belief.mean.value.kind
                inc = preintegration.new_group_increment(kind, trial.stamps[prev])
                for k in range(prev, step):
                    inc = inc.accumulate(trial.inputs[k], trial.dt)
                pm = preintegration.as_process_model(inc)
                belief = self._predict(belief, pm, None, inc.duration)
                for m in meas_list:
                    belief = self._correct(belief, m)
                records.append((trial.stamps[step], trial.truth[step], belief))
                prev = step
        else:
            epoch_map = {step: meas_list for step, meas_list in trial.epochs}
            for k in range(len(trial.inputs)):
                belief = self._predict(belief, process, trial.inputs[k], trial.dt)
                meas_list = epoch_map.get(k + 1)
                if meas_list is not None:
                    for m in meas_list:
                        belief = self._correct(belief, m)
                    records.append((trial.stamps[k + 1], trial.truth[k + 1], belief))
        return _trace_from_records(records)


class BatchEstimator:
    """MAP smoothing: variables at the epochs, process terms from
    preintegrated increments, posterior marginals for per-epoch beliefs."""

    name = "batch"

    def run(self, trial: SimulatedTrial) -> evaluation.TrajectoryTrace:
        belief0 = trial.initial_belief
        variables = [belief0.mean.with_state_id(0)]
        terms = [batch.make_prior_term(0, belief0)]
        prev = 0
        guess = belief0.mean
        kind = belief0.mean.value.kind
        for idx, (step, meas_list) in enumerate(trial.epochs, start=1):
            inc = preintegration.new_group_increment(kind, trial.stamps[prev])
            for k in range(prev, step):
                inc = inc.accumulate(trial.inputs[k], trial.dt)
            pm = preintegration.as_process_model(inc)
            guess = pm.evaluate(guess, None, inc.duration)
            variables.append(guess.with_state_id(idx))
            terms.append(batch.make_process_term(idx - 1, idx, pm, None,
                                                 inc.duration))
            for m in meas_list:
                terms.append(batch.make_measurement_term(idx, m))
            prev = step
        problem = batch.BatchProblem(variables, terms)
        try:
            solution, _, report = batch.solve(problem, "gauss-newton")
        except ContractViolationError:
            solution, _, report = batch.solve(problem, "levenberg-marquardt")
        keys = list(range(1, len(variables)))
        marginals = batch.posterior_marginals(solution, problem.terms, keys)
        records = []
        for idx, (step, _) in zip(keys, trial.epochs):
            records.append((
                trial.stamps[step],
                trial.truth[step],
                GaussianBelief(solution[idx], marginals[idx]),
            ))
        return _trace_from_records(records)


class ImmEstimator:
    """Two-mode IMM over process-noise hypotheses (1x and 10x the configured
    input noise); measurements enter stacked once per epoch."""

    name = "imm"
    transition = np.array([[0.95, 0.05], [0.05, 0.95]])
    noise_scales = (1.0, 10.0)

    def run(self, trial: SimulatedTrial) -> evaluation.TrajectoryTrace:
        process = models.BodyVelocityProcess()
        modes = [_ScaledNoiseProcess(process, s) for s in self.noise_scales]
        n = len(modes)
        imm = filters.ImmBelief(
            tuple(trial.initial_belief for _ in range(n)),
            np.full(n, 1.0 / n),
            self.transition,
        )
        epoch_map = {step: meas_list for step, meas_list in trial.epochs}
        records = []
        for k in range(len(trial.inputs)):
            meas_list = epoch_map.get(k + 1)
            meas = None
            if meas_list is not None:
                stacked_model = models.StackedMeasurementModel(
                    [m.model for m in meas_list])
                meas = models.StampedMeasurement(
                    np.concatenate([m.value for m in meas_list]),
                    meas_list[0].stamp, stacked_model)
            imm = filters.imm_step(imm, modes, trial.inputs[k], meas, trial.dt)
            if meas_list is not None:
                combined = filters.imm_combine(imm)
                records.append((trial.stamps[k + 1], trial.truth[k + 1], combined))
        return _trace_from_records(records)


def _pairing_error(name: str, side: str) -> Optional[str]:
    if name == "invariant-left" and side != Side.RIGHT:
        return ("invariant-left pairs left-invariant measurement models with "
                "the right perturbation convention; set perturbation_side to "
                "'right'")
    if name == "invariant-right" and side != Side.LEFT:
        return ("invariant-right pairs right-invariant measurement models with "
                "the left perturbation convention; set perturbation_side to "
                "'left'")
    return None


def build_estimator(choice: EstimatorChoice, config: ScenarioConfig):
    """Map an estimator name to a runnable pipeline."""
    name = choice.name
    if name not in FILTER_NAMES:
        raise ConfigurationError(
            f"unknown filter {name!r}; valid names: {', '.join(sorted(FILTER_NAMES))}"
        )
    message = _pairing_error(name, config.perturbation_side)
    if message is not None:
        raise ConfigurationError(message)
    if name == "batch":
        return BatchEstimator()
    if name == "imm":
        return ImmEstimator()
    if name in _SIGMA_SCHEMES:
        scheme = _SIGMA_SCHEMES[name]
        return RecursiveEstimator(
            name,
            lambda b, m, u, dt: filters.spkf_predict(b, m, u, dt, scheme),
            lambda b, meas: filters.spkf_correct(b, meas, scheme),
            preintegrate=choice.preintegrate,
        )
    predict = lambda b, m, u, dt: filters.ekf_predict(b, m, u, dt)
    if name == "ekf":
        correct = lambda b, meas: filters.ekf_correct(b, meas)
    elif name == "iterekf":
        correct = lambda b, meas: filters.iterated_ekf_correct(b, meas).belief
    else:  # invariant-left / invariant-right
        correct = lambda b, meas: filters.invariant_ekf_correct(b, meas)
    return RecursiveEstimator(name, predict, correct,
                              preintegrate=choice.preintegrate)


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _write_trace_csv(path, report: evaluation.ConsistencyReport) -> None:
    # tangent ordering is [rotation; translation]; columns use translation
    # first per the trace contract
    with open(path, "w") as fh:
        fh.write("t,err_x,err_y,err_z,err_rx,err_ry,err_rz,error_norm,nees\n")
        for k in range(len(report.stamps)):
            e = report.errors[k]
            row = [report.stamps[k], e[3], e[4], e[5], e[0], e[1], e[2],
                   report.error_norms[k], report.nees_values[k]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def run_scenario(config: ScenarioConfig, filter_name: str, seed: int,
                 trials: int, out_dir, fmt: str = "both",
                 preintegrate: bool = False) -> dict:
    """Library form of ``navkit run``; returns the summary dictionary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    estimator = build_estimator(EstimatorChoice(filter_name, preintegrate), config)
    start = time.perf_counter()
    reports = evaluation.run_monte_carlo(config, estimator, trials, seed)
    wall = time.perf_counter() - start
    failed = sum(1 for r in reports if r.failed)
    if failed == trials:
        raise FloatingPointError("estimator diverged in every trial")
    agg = evaluation.aggregate_reports(reports)
    if fmt in ("csv", "both"):
        _write_trace_csv(out / f"trace_{filter_name}.csv", agg)
    if fmt in ("svg", "both"):
        evaluation.svg_line_plot(
            out / "error_norm.svg", agg.stamps,
            {filter_name: agg.error_norms},
            "Position error norm", "time [s]", "error norm [m]",
        )
        evaluation.svg_line_plot(
            out / "nees.svg", agg.stamps,
            {filter_name: agg.nees_values},
            f"NEES (dof {agg.dof}, {agg.trials} trials, "
            f"{agg.level:.0%} envelope)", "time [s]", "NEES",
            hlines=(agg.nees_lower, agg.nees_upper),
        )
    rot_sq = np.sum(agg.errors[:, :3] ** 2, axis=1)
    summary = {
        "filter": filter_name,
        "seed": seed,
        "trials": trials,
        "avg_nees": float(np.mean(agg.nees_values)),
        "nees_lower": agg.nees_lower,
        "nees_upper": agg.nees_upper,
        "rmse_position": float(np.sqrt(np.mean(agg.error_norms ** 2))),
        "rmse_rotation": float(np.sqrt(np.mean(rot_sq))),
        "wall_time_s": wall,
        "failed_trials": failed,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def list_filters() -> str:
    lines = [f"{name:16s} {FILTER_NAMES[name]}" for name in FILTER_NAMES]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navkit",
        description="On-manifold state estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="simulate a scenario and run an estimator")
    run_p.add_argument("config", help="path to a scenario JSON file")
    run_p.add_argument("--filter", default="ekf", dest="filter_name",
                       help="estimator name (see list-filters)")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--trials", type=int, default=1)
    run_p.add_argument("--out", default="out", help="output directory")
    run_p.add_argument("--format", default="both", choices=["csv", "svg", "both"])
    run_p.add_argument("--preintegrate", action="store_true",
                       help="compress inputs to one predict per measurement epoch")
    sub.add_parser("list-filters", help="print the available estimator names")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "list-filters":
        print(list_filters())
        return 0
    try:
        config = ScenarioConfig.load(args.config)
    except (OSError, json.JSONDecodeError, TypeError, ContractViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = run_scenario(config, args.filter_name, args.seed, args.trials,
                               args.out, args.format, args.preintegrate)
    except (ConfigurationError, ContractViolationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"estimator failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
