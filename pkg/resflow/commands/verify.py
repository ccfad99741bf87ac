import logging
import math
from pathlib import Path
from typing import List, Optional

import click
import numpy as np

from resflow.analysis import (
    certified_step_limit,
    check_descent,
    check_gradient_field,
    check_lemma1,
    check_lemma2,
    check_lemma3,
    feature_mean_error,
    taylor_order_fit,
)
from resflow.commands.build import build_with_schedule
from resflow.config import settings
from resflow.errors import NumericError, ResflowError, ScheduleError, VerificationError
from resflow.experiment import Experiment, prepare_experiment, sample_pair, seed_int, with_seed
from resflow.feature_maps import check_derivatives
from resflow.flow import invert_flow, push_forward, schedule_second_order
from resflow.measures import (
    ESTIMATOR_STREAM,
    TRIAL_STREAM,
    child_seed,
    mmd_squared,
    mmd_squared_kernel,
    psi,
)
from resflow.models import LIPSCHITZ_LIMIT, ParticleCloud, ResidualBlock
from resflow.schemas import BoundCheck, ScheduleKind, TaylorFit, VerifyReport
from resflow.storage import load_config, write_json

# Stream of the per-trial step size, next to the source and target streams
EPSILON_STREAM = 2

# Share of the certified step limit that trial and Taylor steps may use
CERTIFIED_FRACTION = 0.99

MIN_TAYLOR_POINTS = 4


def _check(name: str, lhs: float, rhs: float, slack: float, tolerance: float = 0.0, **params) -> BoundCheck:
    return BoundCheck(
        name=name,
        lhs=lhs,
        rhs=rhs,
        slack=slack,
        satisfied=slack >= -tolerance,
        tolerance=tolerance,
        params={k: float(v) for k, v in params.items()},
    )


def _failed(name: str, rhs: float, **params) -> BoundCheck:
    return _check(name, 0.0, rhs, -1.0, failed=1.0, **params)


def estimator_checks(experiment: Experiment) -> List[BoundCheck]:
    """Plug-in mean-difference MMD^2 against the kernel double sum on small seeded clouds."""
    config = experiment.config
    v = config.verification
    checks = []
    for s in range(v.estimator_seeds):
        q, p = sample_pair(config, v.estimator_particles, ESTIMATOR_STREAM, s)
        fast = mmd_squared(q, p, experiment.feature_map)
        oracle = mmd_squared_kernel(q, p, experiment.feature_map)
        gap = abs(fast - oracle)
        checks.append(_check("estimator", gap, v.estimator_tol, v.estimator_tol - gap, stream=s))
    return checks


def feature_mean_checks(experiment: Experiment, clouds: List[ParticleCloud]) -> List[BoundCheck]:
    """Vectorised feature means against exactly rounded sums."""
    tol = experiment.config.verification.estimator_tol
    checks = []
    for index, cloud in enumerate(clouds):
        error = feature_mean_error(cloud, experiment.feature_map)
        checks.append(_check("feature_mean", error, tol, tol - error, cloud=index))
    return checks


def _trial_epsilon(experiment: Experiment, psi_norm: float, trial: int) -> float:
    v = experiment.config.verification
    rng = np.random.default_rng(child_seed(experiment.config.seed, TRIAL_STREAM, trial, EPSILON_STREAM))
    epsilon = math.exp(rng.uniform(math.log(v.eps_min), math.log(v.eps_max)))
    # stay inside the 1/2-Lipschitz certificate
    return min(epsilon, CERTIFIED_FRACTION * certified_step_limit(experiment.feature_map, psi_norm))


def trial_checks(experiment: Experiment) -> List[BoundCheck]:
    config = experiment.config
    v = config.verification
    fmap = experiment.feature_map
    checks = []
    for t in range(v.trials):
        q, p = sample_pair(config, v.n_particles, TRIAL_STREAM, t)
        witness = psi(p, q, fmap)
        psi_norm = float(np.linalg.norm(witness))
        if psi_norm <= config.stop_tol:
            logging.debug(f"Trial {t}: clouds already match; skipped.")
            continue
        epsilon = _trial_epsilon(experiment, psi_norm, t)
        seed = seed_int(child_seed(config.seed, TRIAL_STREAM, t))

        checks.append(check_lemma1(q, p, fmap, epsilon, seed))
        checks.append(check_lemma3(q, p, fmap, epsilon, seed))
        block = ResidualBlock(epsilon=epsilon, psi=witness, feature_map=fmap)
        checks.append(check_lemma2(block, v.pair_samples, seed))

        eps_delta = schedule_second_order(fmap.constants, psi_norm, 0.5, fmap.dim_in, fmap.dim_out).epsilon_delta
        if epsilon <= eps_delta:
            checks.append(check_descent(q, p, fmap, epsilon, seed))
    return checks


def taylor_check(experiment: Experiment) -> tuple:
    """Fit the remainder order on the grid points whose blocks keep their certificate."""
    config = experiment.config
    fmap = experiment.feature_map
    lo, hi = config.verification.taylor_slope_range
    q, p = sample_pair(config, config.verification.n_particles, TRIAL_STREAM, config.verification.trials)

    limit = CERTIFIED_FRACTION * certified_step_limit(fmap, float(np.linalg.norm(psi(p, q, fmap))))
    grid = [eps for eps in config.verification.taylor_grid if eps <= limit]
    dropped = len(config.verification.taylor_grid) - len(grid)
    if dropped:
        logging.warning(f"Taylor grid: {dropped} step(s) above the certified limit {limit:.6g} dropped.")
    if len(grid) < MIN_TAYLOR_POINTS:
        logging.error(f"Taylor fit needs {MIN_TAYLOR_POINTS} certified steps, only {len(grid)} remain.")
        return None, _failed("taylor_slope", hi, lo=lo, hi=hi, uncertified=dropped)

    try:
        fit = taylor_order_fit(q, p, fmap, grid)
    except ResflowError as e:
        logging.error(f"Taylor fit failed: {e.detail}")
        return None, _failed("taylor_slope", hi, lo=lo, hi=hi, uncertified=dropped)
    slack = min(fit.slope - lo, hi - fit.slope)
    return fit, _check("taylor_slope", fit.slope, hi, slack, lo=lo, hi=hi, uncertified=dropped)


def flow_checks(experiment: Experiment) -> List[BoundCheck]:
    """Build under the configured schedule, then check decay, witness growth and the round trip."""
    config = experiment.config
    v = config.verification
    q0, p = sample_pair(config, config.n_particles)
    try:
        flow, report = build_with_schedule(experiment, q0, p)
    except ScheduleError as e:
        logging.error(f"Build failed: {e.detail}")
        return [_failed("target", config.delta)]

    checks = [
        _check("target", report.achieved_ratio, report.target_delta, report.target_delta - report.achieved_ratio),
        _check("lipschitz", report.max_lip_bound, LIPSCHITZ_LIMIT, LIPSCHITZ_LIMIT - report.max_lip_bound),
    ]
    if report.schedule is not None and report.schedule.kind == ScheduleKind.SECOND_ORDER:
        checks.append(_check("decay", float(report.decay_violations), 0.0, -float(report.decay_violations)))
        checks.append(
            _check("psi_monotone", report.max_psi_ratio, 1.0, 1.0 - report.max_psi_ratio, settings.bound_tol)
        )

    pushed = push_forward(flow, q0)
    try:
        result = invert_flow(flow, pushed, config.inverse_tol, config.inverse_max_iter)
    except NumericError as e:
        logging.error(f"Inversion failed: {e.detail}")
        return checks + [_failed("round_trip", v.round_trip_tol)]
    error = float(np.max(np.linalg.norm(result.cloud.points - q0.points, axis=1)))
    checks.append(
        _check(
            "round_trip", error, v.round_trip_tol, v.round_trip_tol - error,
            max_iterations=max(result.iterations, default=0),
        )
    )
    return checks


def run_verification(experiment: Experiment) -> VerifyReport:
    config = experiment.config
    fmap = experiment.feature_map
    checks: List[BoundCheck] = list(check_derivatives(fmap, seed=config.seed))

    q0, p = sample_pair(config, config.n_particles)
    witness = psi(p, q0, fmap)
    if np.any(witness != 0):
        checks.append(check_gradient_field(fmap, witness, seed=config.seed))

    checks += feature_mean_checks(experiment, [q0, p])
    checks += estimator_checks(experiment)
    checks += trial_checks(experiment)
    fit: Optional[TaylorFit] = None
    if float(np.linalg.norm(witness)) > config.stop_tol:
        fit, slope_check = taylor_check(experiment)
        checks.append(slope_check)
    checks += flow_checks(experiment)

    violations = [
        f"{c.name}: lhs={c.lhs!r} rhs={c.rhs!r} slack={c.slack!r} params={c.params}"
        for c in checks
        if not c.satisfied
    ]
    return VerifyReport(
        certification=experiment.certification,
        taylor=fit,
        checks=checks,
        violations=violations,
        passed=not violations,
    )


@click.command(name="verify")
@click.argument("config_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory.")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the config's master seed.")
@click.pass_context
def verify_command(ctx: click.Context, config_path: Path, out_dir: Optional[Path], seed: Optional[int]):
    """Run the seeded bound-verification suite on CONFIG_PATH and write verify.json."""
    config = with_seed(load_config(config_path), seed)
    out_dir = out_dir or ctx.obj["out_dir"]
    report = run_verification(prepare_experiment(config))
    write_json(report, Path(out_dir) / config.output.verify_json)

    if not report.passed:
        for violation in report.violations:
            logging.error(violation)
        raise VerificationError(f"{len(report.violations)} of {len(report.checks)} checks failed.")
    click.echo(f"checks={len(report.checks)} passed")
