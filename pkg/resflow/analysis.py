"""
Numerical checks of the per-block improvement Delta, its first-order term Delta_1,
the remainder Delta_2 = Delta - Delta_1, and the three analytic bounds on them.
"""
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from resflow.config import settings
from resflow.errors import InputError, NumericError, dimension_mismatch
from resflow.feature_maps import PAIR_SCALES, Array, FeatureMap
from resflow.measures import feature_mean, mmd_squared, psi
from resflow.models import LIPSCHITZ_LIMIT, ParticleCloud, ResidualBlock
from resflow.schemas import BoundCheck, DeltaDecomposition, SmoothnessConstants, TaylorFit

MACHINE_EPS = float(np.finfo(np.float64).eps)
ROUNDOFF_FLOOR = 1e3 * MACHINE_EPS


# --- Analytic right-hand sides ---

def lemma1_rhs(constants: SmoothnessConstants, epsilon: float, mmd_sq: float) -> float:
    return 2.0 * epsilon * constants.b * mmd_sq


def lemma3_rhs(constants: SmoothnessConstants, epsilon: float, psi_norm: float, d_phi: int) -> float:
    c = constants
    curvature = psi_norm * math.sqrt(d_phi) * c.C * (1.0 + epsilon * c.L_feat * math.sqrt(c.B))
    return epsilon**2 * psi_norm**2 * c.B * (c.B + curvature)


def certified_step_limit(feature_map: FeatureMap, psi_norm: float) -> float:
    """Largest eps whose block stays 1/2-Lipschitz at this witness norm; inf for a constant Jacobian."""
    rate = math.sqrt(feature_map.dim_in * feature_map.dim_out) * feature_map.constants.L_Jac * psi_norm
    return LIPSCHITZ_LIMIT / rate if rate > 0 else math.inf


# --- Delta decomposition ---

def _check_pair(q: ParticleCloud, p: ParticleCloud, feature_map: FeatureMap) -> None:
    for cloud in (q, p):
        if cloud.d != feature_map.dim_in:
            raise dimension_mismatch(feature_map.dim_in, cloud.d, what="cloud")


def _shift_terms(q: ParticleCloud, p: ParticleCloud, block: ResidualBlock) -> Tuple[Array, Array]:
    """Current witness psi(p, q) and the per-particle feature shifts phi(z + f(z)) - phi(z)."""
    fmap = block.feature_map
    _check_pair(q, p, fmap)
    witness = psi(p, q, fmap)
    moved = block.forward(q.points)
    shifts = fmap.eval_phi(moved) - fmap.eval_phi(q.points)
    return witness, shifts


def delta_exact(q: ParticleCloud, p: ParticleCloud, block: ResidualBlock) -> float:
    """
    MMD^2(q, p) - MMD^2((Id + f)#q, p), evaluated as 2 psi^T u - |u|^2 where u is
    the mean feature shift. Algebraically identical; avoids cancelling two O(1) terms.
    """
    witness, shifts = _shift_terms(q, p, block)
    u = shifts.mean(axis=0)
    return float(2.0 * witness @ u - u @ u)


def _first_order_terms(q: ParticleCloud, p: ParticleCloud, block: ResidualBlock) -> Array:
    fmap = block.feature_map
    _check_pair(q, p, fmap)
    witness = psi(p, q, fmap)
    scale = max(1.0, float(np.linalg.norm(witness)))
    if not np.allclose(block.psi, witness, rtol=0.0, atol=1e-12 * scale):
        raise InputError("Block psi does not match psi(p, q) for these clouds.")
    grad = fmap.gradient_field(block.psi, q.points)
    return 2.0 * block.epsilon * np.sum(grad * grad, axis=1)


def delta_first_order(q: ParticleCloud, p: ParticleCloud, block: ResidualBlock) -> float:
    """2 eps * mean over q of |J_phi(z)^T psi|^2, the chain-rule first-order term."""
    return float(_first_order_terms(q, p, block).mean())


def decompose_delta(q: ParticleCloud, p: ParticleCloud, block: ResidualBlock) -> DeltaDecomposition:
    fmap = block.feature_map
    delta = delta_exact(q, p, block)
    delta1 = delta_first_order(q, p, block)
    moved = ParticleCloud(block.forward(q.points))
    return DeltaDecomposition(
        delta=delta,
        delta1=delta1,
        delta2=delta - delta1,
        epsilon=block.epsilon,
        mmd_sq_before=mmd_squared(q, p, fmap),
        mmd_sq_after=mmd_squared(moved, p, fmap),
    )


# --- Bound checks ---

def _standard_error(values: Array) -> float:
    n = values.shape[0]
    if n < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(n))


def _tolerance(se: float = 0.0) -> float:
    return settings.bound_tol + settings.se_multiplier * se


def _bound_check(
    name: str,
    lhs: float,
    rhs: float,
    slack: float,
    tolerance: float,
    seed: Optional[int] = None,
    params: Optional[Dict[str, float]] = None,
) -> BoundCheck:
    return BoundCheck(
        name=name,
        lhs=lhs,
        rhs=rhs,
        slack=slack,
        satisfied=slack >= -tolerance,
        tolerance=tolerance,
        seed=seed,
        params=params or {},
    )


def _block_for(q: ParticleCloud, p: ParticleCloud, feature_map: FeatureMap, epsilon: float) -> ResidualBlock:
    _check_pair(q, p, feature_map)
    return ResidualBlock(epsilon=epsilon, psi=psi(p, q, feature_map), feature_map=feature_map)


def check_lemma1(
    q: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    epsilon: float,
    seed: Optional[int] = None,
) -> BoundCheck:
    """Delta_1 >= 2 eps b MMD^2."""
    block = _block_for(q, p, feature_map, epsilon)
    terms = _first_order_terms(q, p, block)
    lhs = float(terms.mean())
    rhs = lemma1_rhs(feature_map.constants, epsilon, block.psi_norm**2)
    return _bound_check(
        "lemma1", lhs, rhs, lhs - rhs, _tolerance(_standard_error(terms)), seed,
        {"epsilon": epsilon, "b": feature_map.constants.b, "mmd_sq": block.psi_norm**2},
    )


def check_lemma2(
    block: ResidualBlock,
    pair_samples: int,
    seed: int,
    scale: Optional[float] = None,
) -> BoundCheck:
    """Sampled difference quotients of f never exceed eps sqrt(d d_phi) L_Jac |psi|."""
    if pair_samples < 1:
        raise InputError("pair_samples must be at least 1.")
    scale = settings.certify_sample_scale if scale is None else scale
    rng = np.random.default_rng(seed)
    d = block.dim
    x = rng.normal(scale=scale, size=(pair_samples, d))
    directions = rng.standard_normal((pair_samples, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    steps = np.array(PAIR_SCALES)[np.arange(pair_samples) % len(PAIR_SCALES)]
    y = x + steps[:, None] * directions
    quotients = np.linalg.norm(block.displacement(y) - block.displacement(x), axis=1) / np.linalg.norm(y - x, axis=1)
    lhs = float(quotients.max())
    rhs = block.lipschitz_bound()
    return _bound_check(
        "lemma2", lhs, rhs, rhs - lhs, _tolerance(), seed,
        {"epsilon": block.epsilon, "psi_norm": block.psi_norm, "pair_samples": float(pair_samples)},
    )


def check_lemma3(
    q: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    epsilon: float,
    seed: Optional[int] = None,
) -> BoundCheck:
    """|Delta_2| <= eps^2 MMD^2 B (B + |psi| sqrt(d_phi) C (1 + eps L_feat sqrt(B)))."""
    block = _block_for(q, p, feature_map, epsilon)
    parts = decompose_delta(q, p, block)
    witness, shifts = _shift_terms(q, p, block)
    remainder_terms = 2.0 * shifts @ witness - _first_order_terms(q, p, block)
    lhs = abs(parts.delta2)
    rhs = lemma3_rhs(feature_map.constants, epsilon, block.psi_norm, feature_map.dim_out)
    return _bound_check(
        "lemma3", lhs, rhs, rhs - lhs, _tolerance(_standard_error(remainder_terms)), seed,
        {"epsilon": epsilon, "psi_norm": block.psi_norm, "delta2": parts.delta2},
    )


def check_descent(
    q: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    epsilon: float,
    seed: Optional[int] = None,
) -> BoundCheck:
    """Delta >= b eps MMD^2, which Lemmas 1 and 3 give for eps <= eps_Delta."""
    block = _block_for(q, p, feature_map, epsilon)
    witness, shifts = _shift_terms(q, p, block)
    lhs = delta_exact(q, p, block)
    rhs = feature_map.constants.b * epsilon * block.psi_norm**2
    return _bound_check(
        "descent", lhs, rhs, lhs - rhs, _tolerance(_standard_error(2.0 * shifts @ witness)), seed,
        {"epsilon": epsilon, "b": feature_map.constants.b},
    )


def check_gradient_field(
    feature_map: FeatureMap,
    witness,
    n_points: int = 100,
    seed: int = 0,
    step: Optional[float] = None,
    rtol: Optional[float] = None,
) -> BoundCheck:
    """J_phi(z)^T psi against central differences of g(z) = psi^T phi(z)."""
    step = settings.fd_step if step is None else step
    rtol = settings.derivative_rtol if rtol is None else rtol
    witness = feature_map.check_psi(witness)
    rng = np.random.default_rng(seed)
    d = feature_map.dim_in
    z = rng.standard_normal((n_points, d))
    exact = feature_map.gradient_field(witness, z)
    approx = np.empty_like(exact)
    for k in range(d):
        shift = np.zeros(d)
        shift[k] = step
        approx[:, k] = (feature_map.eval_phi(z + shift) @ witness - feature_map.eval_phi(z - shift) @ witness) / (2 * step)
    err = float(np.max(np.abs(exact - approx) / np.maximum(1.0, np.abs(exact))))
    return _bound_check("gradient_fd", err, rtol, rtol - err, 0.0, seed, {"step": step, "n_points": float(n_points)})


def taylor_order_fit(
    q: ParticleCloud,
    p: ParticleCloud,
    feature_map: FeatureMap,
    eps_grid: Sequence[float],
) -> TaylorFit:
    """Least-squares slope of log|Delta_2| against log eps; 2 for an O(eps^2) remainder."""
    grid = np.asarray(eps_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 4:
        raise InputError("eps_grid needs at least 4 values.")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise InputError("eps_grid must be positive and strictly decreasing.")
    if grid[0] / grid[-1] < 100:
        raise InputError("eps_grid must span at least two decades.")

    mmd_sq = mmd_squared(q, p, feature_map)
    floor = ROUNDOFF_FLOOR * mmd_sq
    kept_eps, kept_rem = [], []
    for epsilon in grid:
        block = _block_for(q, p, feature_map, float(epsilon))
        remainder = abs(decompose_delta(q, p, block).delta2)
        if remainder > floor:
            kept_eps.append(float(epsilon))
            kept_rem.append(remainder)
    if len(kept_eps) < 3:
        raise NumericError(
            f"Only {len(kept_eps)} remainder values lie above the round-off floor {floor:.3g}; cannot fit an order."
        )
    slope, intercept = np.polyfit(np.log(kept_eps), np.log(kept_rem), 1)
    return TaylorFit(
        slope=float(slope),
        intercept=float(intercept),
        epsilons=kept_eps,
        remainders=kept_rem,
        excluded=int(grid.size - len(kept_eps)),
    )


def feature_mean_oracle(cloud: ParticleCloud, feature_map: FeatureMap) -> Array:
    """Exactly rounded per-coordinate mean via math.fsum, for cross-checking feature_mean."""
    values = feature_map.eval_phi(cloud.points)
    return np.array([math.fsum(column) / cloud.n for column in values.T])


def feature_mean_error(cloud: ParticleCloud, feature_map: FeatureMap) -> float:
    return float(np.max(np.abs(feature_mean(cloud, feature_map) - feature_mean_oracle(cloud, feature_map))))
