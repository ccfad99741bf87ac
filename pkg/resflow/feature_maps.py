"""
Explicit feature maps phi: R^d -> R^{d_phi} with analytic derivatives and
declared smoothness constants, plus numerical certification of those constants.
"""
import logging
import math
from abc import ABC, abstractmethod
from typing import ClassVar, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import linalg

from resflow.config import settings
from resflow.errors import InputError, dimension_mismatch
from resflow.schemas import (
    AffineMapSpec,
    BoundCheck,
    BoundedSineMapSpec,
    CertificationReport,
    ObservedConstants,
    SmoothnessConstants,
)

Array = npt.NDArray[np.float64]

# Separation scales for difference-quotient pairs
PAIR_SCALES = (1e-3, 1e-1, 1.0)


def _frozen(values) -> Array:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class FeatureMap(ABC):
    """
    Base class for analytic feature maps.

    Every evaluation accepts a single point of shape (d,) or a batch of shape (n, d);
    batch outputs carry the particle axis first. Instances are immutable.
    """
    kind: ClassVar[str]

    def __init__(self, dim_in: int, dim_out: int, constants: Optional[SmoothnessConstants] = None):
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.constants = constants if constants is not None else self.analytic_constants()

    def _points(self, z) -> Tuple[Array, bool]:
        arr = np.asarray(z, dtype=np.float64)
        if arr.ndim == 1:
            arr, single = arr[None, :], True
        elif arr.ndim == 2:
            single = False
        else:
            raise InputError(f"Expected a point or an (n, d) batch, got shape {arr.shape}.")
        if arr.shape[1] != self.dim_in:
            raise dimension_mismatch(self.dim_in, arr.shape[1])
        if not np.all(np.isfinite(arr)):
            raise InputError("Points must be finite.")
        return arr, single

    def eval_phi(self, z) -> Array:
        points, single = self._points(z)
        out = self._phi(points)
        return out[0] if single else out

    def jacobian(self, z) -> Array:
        """J_phi(z) with shape (d_phi, d), or (n, d_phi, d) for a batch."""
        points, single = self._points(z)
        out = self._jacobian(points)
        return out[0] if single else out

    def hessian(self, i: int, z) -> Array:
        """Hessian of coordinate i (0-based) at a single point, shape (d, d)."""
        if not isinstance(i, (int, np.integer)) or not 0 <= i < self.dim_out:
            raise InputError(f"Coordinate index {i} out of range [0, {self.dim_out}).")
        points, single = self._points(z)
        if not single:
            raise InputError("hessian expects a single point.")
        return self._hessians(points)[0, i]

    def gradient_field(self, psi, z) -> Array:
        """grad g(z) = J_phi(z)^T psi for g(z) = psi^T phi(z)."""
        psi = self.check_psi(psi)
        return np.einsum("...kd,k->...d", self.jacobian(z), psi)

    def check_psi(self, psi) -> Array:
        psi = np.asarray(psi, dtype=np.float64)
        if psi.shape != (self.dim_out,):
            raise dimension_mismatch(self.dim_out, psi.shape[-1] if psi.ndim else 0, what="psi")
        return psi

    @abstractmethod
    def analytic_constants(self) -> SmoothnessConstants:
        ...

    @abstractmethod
    def to_spec(self) -> Union[AffineMapSpec, BoundedSineMapSpec]:
        ...

    @abstractmethod
    def _phi(self, points: Array) -> Array:
        ...

    @abstractmethod
    def _jacobian(self, points: Array) -> Array:
        ...

    @abstractmethod
    def _hessians(self, points: Array) -> Array:
        """All coordinate Hessians, shape (n, d_phi, d, d)."""
        ...

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim_in={self.dim_in}, dim_out={self.dim_out})"


class AffineFeatureMap(FeatureMap):
    """phi(z) = A z + c with A of full column rank."""
    kind = "affine"

    def __init__(self, matrix, offset=None, constants: Optional[SmoothnessConstants] = None):
        self.matrix = _frozen(matrix)
        if self.matrix.ndim != 2:
            raise InputError("Affine matrix must be two-dimensional.")
        dim_out, dim_in = self.matrix.shape
        self.offset = _frozen(np.zeros(dim_out) if offset is None else offset)
        if self.offset.shape != (dim_out,):
            raise dimension_mismatch(dim_out, self.offset.shape[0], what="offset")
        super().__init__(dim_in, dim_out, constants)

    def analytic_constants(self) -> SmoothnessConstants:
        singular = linalg.svdvals(self.matrix)
        rank_tol = np.finfo(np.float64).eps * max(self.matrix.shape) * singular.max()
        if self.matrix.shape[0] < self.matrix.shape[1] or singular.min() <= rank_tol:
            raise InputError("Affine feature map needs a matrix with full column rank.")
        s_min, s_max = float(singular.min()), float(singular.max())
        return SmoothnessConstants(b=s_min**2, B=s_max**2, C=0.0, L_feat=s_max, L_Jac=0.0)

    def to_spec(self) -> AffineMapSpec:
        return AffineMapSpec(matrix=self.matrix.tolist(), offset=self.offset.tolist(), constants=self.constants)

    def _phi(self, points: Array) -> Array:
        return points @ self.matrix.T + self.offset

    def _jacobian(self, points: Array) -> Array:
        return np.broadcast_to(self.matrix, (points.shape[0],) + self.matrix.shape).copy()

    def _hessians(self, points: Array) -> Array:
        return np.zeros((points.shape[0], self.dim_out, self.dim_in, self.dim_in))


class BoundedSineFeatureMap(FeatureMap):
    """
    phi(z) = (z, alpha * sin(W z)).

    The identity block keeps sigma_min(J) >= 1 on all of R^d; the sine block
    adds bounded curvature.
    """
    kind = "bounded_sine"

    def __init__(self, alpha: float, weights, constants: Optional[SmoothnessConstants] = None):
        if alpha < 0 or not math.isfinite(alpha):
            raise InputError(f"alpha must be finite and non-negative, got {alpha}.")
        self.alpha = float(alpha)
        self.weights = _frozen(weights)
        if self.weights.ndim != 2:
            raise InputError("Sine weights must be a (k, d) matrix.")
        n_waves, dim_in = self.weights.shape
        super().__init__(dim_in, dim_in + n_waves, constants)

    def analytic_constants(self) -> SmoothnessConstants:
        w = self.weights
        row_norms = np.linalg.norm(w, axis=1)
        B = 1.0 + self.alpha**2 * float(linalg.svdvals(w).max()) ** 2
        return SmoothnessConstants(
            b=1.0,
            B=B,
            C=self.alpha * float(np.max(row_norms**2)),
            L_feat=math.sqrt(B),
            L_Jac=self.alpha * float(np.max(np.abs(w).max(axis=1) * row_norms)),
        )

    def to_spec(self) -> BoundedSineMapSpec:
        return BoundedSineMapSpec(alpha=self.alpha, weights=self.weights.tolist(), constants=self.constants)

    def _phi(self, points: Array) -> Array:
        return np.hstack([points, self.alpha * np.sin(points @ self.weights.T)])

    def _jacobian(self, points: Array) -> Array:
        n = points.shape[0]
        top = np.broadcast_to(np.eye(self.dim_in), (n, self.dim_in, self.dim_in))
        bottom = self.alpha * np.cos(points @ self.weights.T)[:, :, None] * self.weights[None, :, :]
        return np.concatenate([top, bottom], axis=1)

    def _hessians(self, points: Array) -> Array:
        n, d = points.shape
        out = np.zeros((n, self.dim_out, d, d))
        outer = self.weights[:, :, None] * self.weights[:, None, :]
        out[:, d:] = -self.alpha * np.sin(points @ self.weights.T)[:, :, None, None] * outer[None]
        return out


def build_feature_map(spec: Union[AffineMapSpec, BoundedSineMapSpec], dim: int) -> FeatureMap:
    """Construct a feature map acting on R^dim from its config spec."""
    if isinstance(spec, AffineMapSpec):
        if spec.matrix is not None:
            matrix = np.array(spec.matrix)
        elif spec.seed is not None:
            rng = np.random.default_rng(spec.seed)
            matrix = rng.standard_normal((spec.dim_out or dim, dim))
        else:
            matrix = np.eye(spec.dim_out or dim, dim)
        fmap = AffineFeatureMap(matrix, spec.offset, spec.constants)
    elif isinstance(spec, BoundedSineMapSpec):
        if spec.weights is not None:
            weights = np.array(spec.weights)
        elif spec.seed is not None:
            rng = np.random.default_rng(spec.seed)
            weights = spec.weight_scale * rng.standard_normal((spec.n_waves or dim, dim))
        else:
            weights = spec.weight_scale * np.eye(spec.n_waves or dim, dim)
        fmap = BoundedSineFeatureMap(spec.alpha, weights, spec.constants)
    else:
        raise InputError(f"Unknown feature map spec: {spec!r}")
    if fmap.dim_in != dim:
        raise dimension_mismatch(dim, fmap.dim_in, what="feature map")
    return fmap


def _dominates(declared: float, observed: float, rtol: float) -> bool:
    return observed <= declared + rtol * max(1.0, abs(declared))


def certify_constants(
    feature_map: FeatureMap,
    sample_budget: int,
    rng_seed: int,
    scale: Optional[float] = None,
) -> CertificationReport:
    """
    Compare declared smoothness constants against worst-case observations at sampled points.

    Sampling cannot certify a global infimum; the declared constants are analytic and
    this report only falsifies them.
    """
    if sample_budget < 1:
        raise InputError("sample_budget must be at least 1.")
    scale = settings.certify_sample_scale if scale is None else scale
    rtol = settings.certify_rtol
    rng = np.random.default_rng(rng_seed)
    d, d_phi = feature_map.dim_in, feature_map.dim_out

    z = rng.normal(scale=scale, size=(sample_budget, d))
    z[0] = 0.0

    jac = feature_map.jacobian(z)
    singular = np.linalg.svd(jac, compute_uv=False)
    sigma_min_sq = float(np.min(singular[:, -1]) ** 2) if d_phi >= d else 0.0
    sigma_max_sq = float(np.max(singular[:, 0]) ** 2)
    hessian_eig = float(np.max(np.abs(np.linalg.eigvalsh(feature_map._hessians(z)))))

    directions = rng.standard_normal((sample_budget, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    steps = np.array(PAIR_SCALES)[np.arange(sample_budget) % len(PAIR_SCALES)]
    y = z + steps[:, None] * directions
    dist = np.linalg.norm(y - z, axis=1)
    lip_feat = float(np.max(np.linalg.norm(feature_map.eval_phi(y) - feature_map.eval_phi(z), axis=1) / dist))
    jac_diff = np.abs(feature_map.jacobian(y) - jac).max(axis=(1, 2))
    lip_jac = float(np.max(jac_diff / dist))

    declared = feature_map.constants
    observed = ObservedConstants(
        sigma_min_sq=sigma_min_sq,
        sigma_max_sq=sigma_max_sq,
        hessian_eig=hessian_eig,
        lip_feat=lip_feat,
        lip_jac=lip_jac,
    )

    violations: List[str] = []
    if not _dominates(sigma_min_sq, declared.b, rtol):
        violations.append(f"b: declared {declared.b!r} exceeds observed sigma_min^2 {sigma_min_sq!r}")
    pairs = (
        ("B", declared.B, sigma_max_sq),
        ("C", declared.C, hessian_eig),
        ("L_feat", declared.L_feat, lip_feat),
        ("L_Jac", declared.L_Jac, lip_jac),
    )
    for name, value, seen in pairs:
        if not _dominates(value, seen, rtol):
            violations.append(f"{name}: declared {value!r} below observed {seen!r}")

    if d_phi > d:
        logging.warning(
            f"{feature_map!r}: d_phi > d, so b bounds J_phi only along the {d} input directions."
        )
    if violations:
        logging.error(f"Certification of {feature_map!r} failed: {'; '.join(violations)}")
    else:
        logging.info(f"Certified constants of {feature_map!r} over {sample_budget} samples.")

    return CertificationReport(
        declared=declared,
        observed=observed,
        sample_budget=sample_budget,
        seed=rng_seed,
        violations=violations,
        passed=not violations,
    )


def check_derivatives(
    feature_map: FeatureMap,
    n_points: int = 100,
    seed: int = 0,
    step: Optional[float] = None,
    rtol: Optional[float] = None,
) -> List[BoundCheck]:
    """Central-difference oracles for the Jacobian and every coordinate Hessian."""
    step = settings.fd_step if step is None else step
    rtol = settings.derivative_rtol if rtol is None else rtol
    rng = np.random.default_rng(seed)
    d = feature_map.dim_in
    z = rng.standard_normal((n_points, d))

    jac = feature_map.jacobian(z)
    hess = feature_map._hessians(z)
    jac_fd = np.empty_like(jac)
    hess_fd = np.empty_like(hess)
    for k in range(d):
        shift = np.zeros(d)
        shift[k] = step
        jac_fd[:, :, k] = (feature_map.eval_phi(z + shift) - feature_map.eval_phi(z - shift)) / (2 * step)
        hess_fd[:, :, :, k] = (feature_map.jacobian(z + shift) - feature_map.jacobian(z - shift)) / (2 * step)

    checks = []
    for name, exact, approx in (("jacobian_fd", jac, jac_fd), ("hessian_fd", hess, hess_fd)):
        err = float(np.max(np.abs(exact - approx) / np.maximum(1.0, np.abs(exact))))
        checks.append(
            BoundCheck(
                name=name,
                lhs=err,
                rhs=rtol,
                slack=rtol - err,
                satisfied=err <= rtol,
                tolerance=0.0,
                seed=seed,
                params={"step": step, "n_points": float(n_points)},
            )
        )
    return checks
