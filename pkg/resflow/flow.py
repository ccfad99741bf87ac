"""
Residual flows of 1/2-Lipschitz blocks: step-size schedules, the greedy stacking
loop and fixed-point inversion.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from resflow.analysis import lemma1_rhs, lemma3_rhs
from resflow.config import settings
from resflow.errors import (
    ConfigError,
    InputError,
    LipschitzCertificateError,
    NumericError,
    ScheduleError,
    dimension_mismatch,
)
from resflow.feature_maps import Array, FeatureMap
from resflow.measures import feature_mean, psi
from resflow.models import ParticleCloud, ResidualBlock, ResidualFlow
from resflow.schemas import (
    BlockRecord,
    BuildReport,
    EpsilonSchedule,
    ScheduleKind,
    SmoothnessConstants,
    StopReason,
)


def block_forward(block: ResidualBlock, z) -> Array:
    return block.forward(z)


def push_forward(flow: ResidualFlow, cloud: ParticleCloud) -> ParticleCloud:
    points = cloud.points
    for block in flow:
        if points.shape[1] != block.dim:
            raise dimension_mismatch(block.dim, points.shape[1], what="cloud")
        points = block.forward(points)
    return ParticleCloud(points)


def lipschitz_bound(block: ResidualBlock) -> float:
    return block.lipschitz_bound()


# --- Schedules ---

def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}.")


def first_order_envelope(b: float, r: float) -> float:
    """Leading decay factor exp(-2 b r) of the first-order construction."""
    return math.exp(-2.0 * b * r)


def schedule_first_order(delta: float, b: float, safety_c: float = 1.0) -> EpsilonSchedule:
    """r = log(2/delta) / 2b, N = ceil(safety_c r^2 / delta), eps = r / N."""
    _check_delta(delta)
    if not b > 0:
        raise ConfigError(f"b must be positive, got {b}.")
    if not safety_c > 0:
        raise ConfigError(f"safety_c must be positive, got {safety_c}.")
    r = math.log(2.0 / delta) / (2.0 * b)
    n_blocks = max(1, math.ceil(safety_c * r * r / delta))
    return EpsilonSchedule(
        kind=ScheduleKind.FIRST_ORDER,
        delta=delta,
        epsilon=r / n_blocks,
        n_blocks=n_blocks,
        r=r,
        safety_c=safety_c,
        envelope=first_order_envelope(b, r),
    )


def predicted_second_order_blocks(delta: float, b: float, eps_hat: float) -> int:
    _check_delta(delta)
    rate = b * eps_hat
    if not 0 < rate < 1:
        raise ScheduleError(f"b * eps_hat must lie in (0, 1), got {rate}.")
    return max(1, math.ceil(math.log(1.0 / delta) / math.log(1.0 / (1.0 - rate))))


def schedule_second_order(
    constants: SmoothnessConstants,
    psi0_norm: float,
    delta: float,
    d: int,
    d_phi: int,
) -> EpsilonSchedule:
    """
    Constant step eps_hat = min(eps_Delta, eps_Lip).

    eps_Delta keeps the Taylor remainder below half of the first-order gain;
    eps_Lip keeps every block 1/2-Lipschitz while |psi_m| <= |psi_0|.
    A partial bound whose constant is zero is vacuous.
    """
    _check_delta(delta)
    if not psi0_norm > 0:
        raise InputError(f"psi0_norm must be positive, got {psi0_norm}.")
    c = constants
    root = math.sqrt(d_phi)

    eps_delta = c.b / (2.0 * (psi0_norm * root * c.B * c.C + c.B**2))
    if c.C > 0 and c.L_feat > 0:
        eps_delta = min(eps_delta, math.sqrt(c.b / (2.0 * psi0_norm * root * c.B**1.5 * c.C * c.L_feat)))

    eps_lip = 1.0 / (2.0 * math.sqrt(d * d_phi) * c.L_Jac * psi0_norm) if c.L_Jac > 0 else math.inf
    eps_hat = min(eps_delta, eps_lip)
    if c.b * eps_hat >= 1:
        raise ScheduleError(f"b * eps_hat = {c.b * eps_hat!r} >= 1; the decay factor would not be positive.")

    return EpsilonSchedule(
        kind=ScheduleKind.SECOND_ORDER,
        delta=delta,
        epsilon=eps_hat,
        n_blocks=predicted_second_order_blocks(delta, c.b, eps_hat),
        epsilon_delta=eps_delta,
        epsilon_lip=None if math.isinf(eps_lip) else eps_lip,
        epsilon_hat=eps_hat,
    )


# --- Building ---

def _check_clouds(q0: ParticleCloud, p: ParticleCloud, feature_map: FeatureMap) -> None:
    for cloud in (q0, p):
        if cloud.d != feature_map.dim_in:
            raise dimension_mismatch(feature_map.dim_in, cloud.d, what="cloud")


def _summarize(
    schedule: Optional[EpsilonSchedule],
    records: List[BlockRecord],
    initial: float,
    final: float,
    delta: float,
    stop_reason: StopReason,
    psi0_norm: float,
) -> BuildReport:
    ratio = final / initial if initial > 0 else 0.0
    return BuildReport(
        schedule=schedule,
        blocks=records,
        n_blocks=len(records),
        n_planned=schedule.n_blocks if schedule is not None else 0,
        initial_mmd_sq=initial,
        final_mmd_sq=final,
        achieved_ratio=ratio,
        target_delta=delta,
        met_target=ratio <= delta,
        stop_reason=stop_reason,
        decay_violations=sum(not r.decay_ok for r in records),
        max_lip_bound=max((r.lip_bound for r in records), default=0.0),
        max_psi_ratio=max((r.psi_norm / psi0_norm for r in records), default=0.0) if psi0_norm > 0 else 0.0,
        safety_c=schedule.safety_c if schedule is not None else None,
    )


def build_flow(
    q0: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    schedule: EpsilonSchedule,
    stop_tol: Optional[float] = None,
    mc_slack: float = 0.0,
) -> Tuple[ResidualFlow, BuildReport]:
    """
    Stack up to schedule.n_blocks blocks, each built from the witness of the current
    pushforward. Stops early once |psi| <= stop_tol or the squared MMD has fallen to
    delta times its initial value.
    """
    stop_tol = settings.stop_tol if stop_tol is None else stop_tol
    if stop_tol < 0:
        raise InputError(f"stop_tol must be non-negative, got {stop_tol}.")
    _check_clouds(q0, p, feature_map)
    constants = feature_map.constants
    eps = schedule.epsilon

    points = q0.points
    phi_q = feature_map.eval_phi(points)
    mean_p = feature_mean(p, feature_map)
    witness = mean_p - phi_q.mean(axis=0)
    mmd_sq = float(witness @ witness)
    initial = mmd_sq
    psi0_norm = math.sqrt(initial)

    logging.info(
        f"Building flow: schedule={schedule.kind.value}, planned N={schedule.n_blocks}, "
        f"eps={eps!r}, initial MMD^2={initial!r}"
    )

    blocks: List[ResidualBlock] = []
    records: List[BlockRecord] = []
    stop_reason = StopReason.SCHEDULE_EXHAUSTED
    for m in range(1, schedule.n_blocks + 1):
        psi_norm = float(np.linalg.norm(witness))
        if psi_norm <= stop_tol:
            stop_reason = StopReason.PSI_BELOW_TOL
            break
        if m > 1 and mmd_sq <= schedule.delta * initial:
            stop_reason = StopReason.TARGET_REACHED
            break

        try:
            block = ResidualBlock(epsilon=eps, psi=witness, feature_map=feature_map)
        except LipschitzCertificateError as e:
            raise e.at_block(m)

        grad = feature_map.gradient_field(block.psi, points)
        moved = points + block.epsilon * grad
        phi_moved = feature_map.eval_phi(moved)
        u = (phi_moved - phi_q).mean(axis=0)
        delta = float(2.0 * witness @ u - u @ u)
        delta1 = float(2.0 * block.epsilon * np.mean(np.sum(grad * grad, axis=1)))

        next_witness = mean_p - phi_moved.mean(axis=0)
        mmd_after = float(next_witness @ next_witness)
        decay_factor = 1.0 - constants.b * eps
        decay_ok = mmd_after <= decay_factor * mmd_sq * (1.0 + mc_slack) + settings.bound_tol * mmd_sq
        if not decay_ok:
            logging.warning(f"Block {m}: MMD^2 {mmd_after!r} above decay bound {decay_factor * mmd_sq!r}")

        records.append(
            BlockRecord(
                m=m,
                epsilon=block.epsilon,
                psi_norm=psi_norm,
                mmd_sq=mmd_sq,
                mmd_sq_after=mmd_after,
                delta=delta,
                delta1=delta1,
                delta2=delta - delta1,
                lip_bound=block.lipschitz_bound(),
                lemma1_rhs=lemma1_rhs(constants, eps, mmd_sq),
                lemma3_rhs=lemma3_rhs(constants, eps, psi_norm, feature_map.dim_out),
                decay_factor=decay_factor,
                decay_ok=decay_ok,
            )
        )
        logging.debug(f"Block {m}: MMD^2 {mmd_sq!r} -> {mmd_after!r}, delta={delta!r}")
        blocks.append(block)
        points, phi_q, witness, mmd_sq = moved, phi_moved, next_witness, mmd_after
    else:
        if mmd_sq <= schedule.delta * initial:
            stop_reason = StopReason.TARGET_REACHED

    report = _summarize(schedule, records, initial, mmd_sq, schedule.delta, stop_reason, psi0_norm)
    logging.info(
        f"Built {report.n_blocks} blocks ({stop_reason.value}); achieved ratio {report.achieved_ratio!r}"
    )
    return ResidualFlow(tuple(blocks)), report


def _empty_build(initial: float, delta: float) -> Tuple[ResidualFlow, BuildReport]:
    logging.info("Source already matches the target; no blocks built.")
    return ResidualFlow(()), _summarize(None, [], initial, initial, delta, StopReason.PSI_BELOW_TOL, 0.0)


def build_first_order(
    q0: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    delta: float,
    safety_c: float = 1.0,
    max_doublings: Optional[int] = None,
    stop_tol: Optional[float] = None,
    mc_slack: float = 0.0,
) -> Tuple[ResidualFlow, BuildReport]:
    """First-order build, doubling safety_c until the target is met or the cap is reached."""
    max_doublings = settings.max_safety_doublings if max_doublings is None else max_doublings
    stop_tol = settings.stop_tol if stop_tol is None else stop_tol
    _check_clouds(q0, p, feature_map)
    witness = psi(p, q0, feature_map)
    if float(np.linalg.norm(witness)) <= stop_tol:
        return _empty_build(float(witness @ witness), delta)

    for attempt in range(max_doublings + 1):
        c = safety_c * 2**attempt
        schedule = schedule_first_order(delta, feature_map.constants.b, c)
        try:
            flow, report = build_flow(q0, p, feature_map, schedule, stop_tol, mc_slack)
        except LipschitzCertificateError as e:
            logging.warning(f"Attempt {attempt + 1} (safety_c={c!r}): {e.detail}")
            continue
        report = report.model_copy(update={"attempts": attempt + 1})
        if report.met_target:
            return flow, report
        logging.warning(
            f"Attempt {attempt + 1} (safety_c={c!r}) reached ratio {report.achieved_ratio!r} > delta={delta!r}"
        )
    raise ScheduleError(
        f"First-order schedule missed delta={delta!r} after {max_doublings + 1} attempts "
        f"(final safety_c={safety_c * 2**max_doublings!r})."
    )


def build_second_order(
    q0: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    delta: float,
    stop_tol: Optional[float] = None,
    mc_slack: float = 0.0,
) -> Tuple[ResidualFlow, BuildReport]:
    stop_tol = settings.stop_tol if stop_tol is None else stop_tol
    _check_clouds(q0, p, feature_map)
    witness = psi(p, q0, feature_map)
    psi0_norm = float(np.linalg.norm(witness))
    if psi0_norm <= stop_tol:
        return _empty_build(float(witness @ witness), delta)
    schedule = schedule_second_order(
        feature_map.constants, psi0_norm, delta, feature_map.dim_in, feature_map.dim_out
    )
    return build_flow(q0, p, feature_map, schedule, stop_tol, mc_slack)


# --- Inversion ---

@dataclass(frozen=True)
class InversionResult:
    cloud: ParticleCloud
    iterations: Tuple[int, ...]  # per block, in application order
    max_residual: float


def _fixed_point(block: ResidualBlock, y, tol: float, max_iter: int) -> Tuple[Array, int, float]:
    if not tol > 0:
        raise InputError(f"tol must be positive, got {tol}.")
    target = np.asarray(y, dtype=np.float64)
    x = target.copy()
    residual = math.inf
    for iteration in range(max_iter + 1):
        x_next = target - block.displacement(x)
        # |x + f(x) - y| for the current iterate
        residual = float(np.max(np.linalg.norm(np.atleast_2d(x - x_next), axis=1)))
        if residual <= tol:
            return x, iteration, residual
        x = x_next
    raise NumericError(
        f"Fixed-point inversion stalled at residual {residual:.3g} after {max_iter} iterations "
        f"(tol {tol:.3g}); the block's Lipschitz certificate does not hold."
    )


def invert_block(block: ResidualBlock, y, tol: Optional[float] = None, max_iter: Optional[int] = None) -> Array:
    """Solve x + f(x) = y by iterating x <- y - f(x) from x = y."""
    tol = settings.inverse_tol if tol is None else tol
    max_iter = settings.inverse_max_iter if max_iter is None else max_iter
    x, _, _ = _fixed_point(block, y, tol, max_iter)
    return x


def invert_flow(
    flow: ResidualFlow,
    cloud: ParticleCloud,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> InversionResult:
    tol = settings.inverse_tol if tol is None else tol
    max_iter = settings.inverse_max_iter if max_iter is None else max_iter
    points = cloud.points
    iterations = []
    max_residual = 0.0
    for block in reversed(flow.blocks):
        if points.shape[1] != block.dim:
            raise dimension_mismatch(block.dim, points.shape[1], what="cloud")
        points, count, residual = _fixed_point(block, points, tol, max_iter)
        iterations.append(count)
        max_residual = max(max_residual, residual)
    return InversionResult(
        cloud=ParticleCloud(points),
        iterations=tuple(reversed(iterations)),
        max_residual=max_residual,
    )
