import enum
import math
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from resflow.config import settings

# --- Enums ---

class ScheduleKind(str, enum.Enum):
    FIRST_ORDER = "first_order"
    SECOND_ORDER = "second_order"

class StopReason(str, enum.Enum):
    TARGET_REACHED = "target_reached"
    PSI_BELOW_TOL = "psi_below_tol"
    SCHEDULE_EXHAUSTED = "schedule_exhausted"


class FrozenModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- Feature map schemas ---

class SmoothnessConstants(FrozenModel):
    b: float = Field(..., gt=0, description="Lower bound on sigma_min(J)^2.")
    B: float = Field(..., gt=0, description="Upper bound on sigma_max(J)^2.")
    C: float = Field(..., ge=0, description="Bound on |eigenvalues| of every coordinate Hessian.")
    L_feat: float = Field(..., ge=0, description="Lipschitz constant of the feature map.")
    L_Jac: float = Field(..., ge=0, description="Lipschitz constant of every Jacobian entry.")

    @model_validator(mode="after")
    def check_ordering(self) -> "SmoothnessConstants":
        values = (self.b, self.B, self.C, self.L_feat, self.L_Jac)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("Smoothness constants must be finite.")
        if self.b > self.B:
            raise ValueError(f"b ({self.b}) must not exceed B ({self.B}).")
        return self

class AffineMapSpec(FrozenModel):
    kind: Literal["affine"] = "affine"
    matrix: Optional[List[List[float]]] = Field(None, description="d_phi x d matrix A; identity when omitted and no seed.")
    offset: Optional[List[float]] = Field(None, description="Offset c of length d_phi.")
    dim_out: Optional[int] = Field(None, gt=0, description="d_phi for a seed-generated matrix.")
    seed: Optional[int] = Field(None, ge=0, description="Generation seed for A when no matrix is given.")
    constants: Optional[SmoothnessConstants] = Field(None, description="Declared constants; analytic when omitted.")

    @field_validator("matrix")
    @classmethod
    def check_rectangular(cls, v):
        if v is not None and (not v or len({len(row) for row in v}) != 1 or not v[0]):
            raise ValueError("matrix must be a non-empty rectangular list of rows.")
        return v

class BoundedSineMapSpec(FrozenModel):
    kind: Literal["bounded_sine"] = "bounded_sine"
    alpha: float = Field(..., ge=0, description="Amplitude of the sine block.")
    weights: Optional[List[List[float]]] = Field(None, description="k x d frequency matrix W.")
    n_waves: Optional[int] = Field(None, gt=0, description="k for a seed-generated W.")
    seed: Optional[int] = Field(None, ge=0)
    weight_scale: float = Field(1.0, gt=0)
    constants: Optional[SmoothnessConstants] = None

    @field_validator("weights")
    @classmethod
    def check_rectangular(cls, v):
        if v is not None and (not v or len({len(row) for row in v}) != 1 or not v[0]):
            raise ValueError("weights must be a non-empty rectangular list of rows.")
        return v

FeatureMapSpec = Annotated[Union[AffineMapSpec, BoundedSineMapSpec], Field(discriminator="kind")]


# --- Distribution schemas ---

class GaussianSpec(FrozenModel):
    kind: Literal["gaussian"] = "gaussian"
    mean: List[float] = Field(..., min_length=1)
    covariance: Optional[List[List[float]]] = Field(None, description="Identity when omitted.")

    def dimension(self) -> int:
        return len(self.mean)

class GaussianComponent(FrozenModel):
    mean: List[float] = Field(..., min_length=1)
    covariance: Optional[List[List[float]]] = None

class GaussianMixtureSpec(FrozenModel):
    kind: Literal["gaussian_mixture"] = "gaussian_mixture"
    components: List[GaussianComponent] = Field(..., min_length=1)
    weights: List[float] = Field(..., min_length=1)

    def dimension(self) -> int:
        return len(self.components[0].mean)

class UniformBoxSpec(FrozenModel):
    kind: Literal["uniform_box"] = "uniform_box"
    lo: List[float] = Field(..., min_length=1)
    hi: List[float] = Field(..., min_length=1)

    def dimension(self) -> int:
        return len(self.lo)

class PointMassSpec(FrozenModel):
    kind: Literal["point_mass"] = "point_mass"
    x: List[float] = Field(..., min_length=1)

    def dimension(self) -> int:
        return len(self.x)

class RingSpec(FrozenModel):
    kind: Literal["ring"] = "ring"
    radius: float = Field(..., gt=0)
    noise: float = Field(0.0, ge=0)
    dim: int = Field(2, ge=2)
    center: Optional[List[float]] = None

    def dimension(self) -> int:
        return self.dim

class PointsSpec(FrozenModel):
    kind: Literal["points"] = "points"
    rows: List[List[float]] = Field(..., min_length=1)

    def dimension(self) -> int:
        return len(self.rows[0])

class CsvSpec(FrozenModel):
    kind: Literal["csv"] = "csv"
    path: str

    def dimension(self) -> Optional[int]:
        return None

DistributionSpec = Annotated[
    Union[GaussianSpec, GaussianMixtureSpec, UniformBoxSpec, PointMassSpec, RingSpec, PointsSpec, CsvSpec],
    Field(discriminator="kind"),
]


# --- Experiment config ---

class VerificationSettings(FrozenModel):
    trials: int = Field(100, ge=1)
    n_particles: int = Field(2000, ge=1)
    pair_samples: int = Field(10_000, ge=1)
    eps_min: float = Field(1e-3, gt=0)
    eps_max: float = Field(0.05, gt=0)
    taylor_grid: List[float] = Field(
        default_factory=lambda: [1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4]
    )
    taylor_slope_range: List[float] = Field(default_factory=lambda: [1.9, 2.1], min_length=2, max_length=2)
    estimator_seeds: int = Field(20, ge=1)
    estimator_particles: int = Field(50, ge=1)
    estimator_tol: float = Field(1e-10, gt=0)
    certify_budget: int = Field(default_factory=lambda: settings.certify_sample_budget, ge=1)
    round_trip_tol: float = Field(1e-9, gt=0)

    @model_validator(mode="after")
    def check_eps_range(self) -> "VerificationSettings":
        if self.eps_min > self.eps_max:
            raise ValueError("eps_min must not exceed eps_max.")
        return self

class OutputSettings(FrozenModel):
    blocks_csv: str = "blocks.csv"
    summary_json: str = "summary.json"
    flow_json: str = "flow.json"
    verify_json: str = "verify.json"
    sweep_csv: str = "sweep.csv"
    sweep_json: str = "sweep_summary.json"

class ExperimentConfig(FrozenModel):
    dim: int = Field(..., gt=0, description="Ambient dimension d.")
    feature_map: FeatureMapSpec
    source: DistributionSpec
    target: DistributionSpec
    n_particles: int = Field(..., ge=1)
    seed: int = Field(0, ge=0)
    schedule: ScheduleKind = ScheduleKind.SECOND_ORDER
    delta: float = Field(..., gt=0, lt=1, description="Target ratio of final to initial squared MMD.")
    safety_c: float = Field(1.0, gt=0)
    max_safety_doublings: int = Field(default_factory=lambda: settings.max_safety_doublings, ge=0)
    stop_tol: float = Field(default_factory=lambda: settings.stop_tol, ge=0)
    mc_slack: float = Field(0.0, ge=0, description="Relative slack on the per-block decay check.")
    inverse_tol: float = Field(default_factory=lambda: settings.inverse_tol, gt=0)
    inverse_max_iter: int = Field(default_factory=lambda: settings.inverse_max_iter, ge=1)
    verification: VerificationSettings = Field(default_factory=VerificationSettings)
    output: OutputSettings = Field(default_factory=OutputSettings)

    @model_validator(mode="after")
    def check_dimensions(self) -> "ExperimentConfig":
        for name in ("source", "target"):
            spec_dim = getattr(self, name).dimension()
            if spec_dim is not None and spec_dim != self.dim:
                raise ValueError(f"{name} has dimension {spec_dim}, expected {self.dim}.")
        fmap = self.feature_map
        columns = None
        if isinstance(fmap, AffineMapSpec) and fmap.matrix is not None:
            columns = len(fmap.matrix[0])
        if isinstance(fmap, BoundedSineMapSpec) and fmap.weights is not None:
            columns = len(fmap.weights[0])
        if columns is not None and columns != self.dim:
            raise ValueError(f"feature_map acts on dimension {columns}, expected {self.dim}.")
        return self


# --- Schedules and build reports ---

class EpsilonSchedule(FrozenModel):
    kind: ScheduleKind
    delta: float = Field(..., gt=0, lt=1)
    epsilon: float = Field(..., gt=0)
    n_blocks: int = Field(..., ge=1)
    # first order
    r: Optional[float] = None
    safety_c: Optional[float] = None
    envelope: Optional[float] = Field(None, description="Leading decay factor exp(-2 b r).")
    # second order; None means the constraint is vacuous
    epsilon_delta: Optional[float] = None
    epsilon_lip: Optional[float] = None
    epsilon_hat: Optional[float] = None

class BlockRecord(FrozenModel):
    m: int
    epsilon: float
    psi_norm: float
    mmd_sq: float = Field(..., description="Squared MMD before the block.")
    mmd_sq_after: float
    delta: float
    delta1: float
    delta2: float
    lip_bound: float
    lemma1_rhs: float
    lemma3_rhs: float
    decay_factor: float
    decay_ok: bool

class BuildReport(FrozenModel):
    schedule: Optional[EpsilonSchedule]
    blocks: List[BlockRecord]
    n_blocks: int
    n_planned: int
    initial_mmd_sq: float
    final_mmd_sq: float
    achieved_ratio: float
    target_delta: float
    met_target: bool
    stop_reason: StopReason
    decay_violations: int
    max_lip_bound: float
    max_psi_ratio: float
    safety_c: Optional[float] = None
    attempts: int = 1


# --- Verification schemas ---

class BoundCheck(FrozenModel):
    name: str
    lhs: float
    rhs: float
    slack: float = Field(..., description="Positive when satisfied.")
    satisfied: bool
    tolerance: float
    seed: Optional[int] = None
    params: Dict[str, float] = Field(default_factory=dict)

class ObservedConstants(FrozenModel):
    sigma_min_sq: float
    sigma_max_sq: float
    hessian_eig: float
    lip_feat: float
    lip_jac: float

class CertificationReport(FrozenModel):
    declared: SmoothnessConstants
    observed: ObservedConstants
    sample_budget: int
    seed: int
    violations: List[str]
    passed: bool

class DeltaDecomposition(FrozenModel):
    delta: float
    delta1: float
    delta2: float
    epsilon: float
    mmd_sq_before: float
    mmd_sq_after: float

class TaylorFit(FrozenModel):
    slope: float
    intercept: float
    epsilons: List[float]
    remainders: List[float]
    excluded: int

class VerifyReport(FrozenModel):
    certification: CertificationReport
    taylor: Optional[TaylorFit]
    checks: List[BoundCheck]
    violations: List[str]
    passed: bool


# --- Sweep schemas ---

class SweepRow(FrozenModel):
    delta: float
    schedule: ScheduleKind
    n_predicted: Optional[int] = None
    n_used: Optional[int] = None
    epsilon: Optional[float] = None
    safety_c: Optional[float] = None
    achieved_ratio: Optional[float] = None
    met_target: bool = False
    error: Optional[str] = None

class SweepPoint(FrozenModel):
    delta: float
    n_first_order: Optional[int]
    n_second_order: Optional[int]
    block_ratio: Optional[float]

class SweepSummary(FrozenModel):
    points: List[SweepPoint]
    separation_monotone: bool
