from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np

from resflow.errors import InputError, LipschitzCertificateError
from resflow.feature_maps import Array, FeatureMap

LIPSCHITZ_LIMIT = 0.5


@dataclass(frozen=True)
class ParticleCloud:
    """
    A uniformly weighted empirical distribution: n particles in R^d.
    The stored array is a read-only copy.
    """
    points: Array

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise InputError(f"A particle cloud needs an (n, d) array with n >= 1, got shape {points.shape}.")
        if not np.all(np.isfinite(points)):
            raise InputError("Particle coordinates must be finite.")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class ResidualBlock:
    """
    One layer Id + f with f(z) = epsilon * J_phi(z)^T psi.

    psi is the witness vector frozen when the block was built. Construction fails
    unless the analytic Lipschitz bound of f is at most 1/2.
    """
    epsilon: float
    psi: Array
    feature_map: FeatureMap = field(repr=False)

    def __post_init__(self):
        if not self.epsilon > 0 or not np.isfinite(self.epsilon):
            raise InputError(f"epsilon must be a positive finite number, got {self.epsilon}.")
        psi = np.array(self.feature_map.check_psi(self.psi), dtype=np.float64)
        psi.setflags(write=False)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "psi", psi)
        bound = self.lipschitz_bound()
        if bound > LIPSCHITZ_LIMIT:
            raise LipschitzCertificateError(bound)

    @property
    def dim(self) -> int:
        return self.feature_map.dim_in

    @property
    def psi_norm(self) -> float:
        return float(np.linalg.norm(self.psi))

    def lipschitz_bound(self) -> float:
        fmap = self.feature_map
        return self.epsilon * float(np.sqrt(fmap.dim_in * fmap.dim_out)) * fmap.constants.L_Jac * self.psi_norm

    def displacement(self, z) -> Array:
        return self.epsilon * self.feature_map.gradient_field(self.psi, z)

    def forward(self, z) -> Array:
        z = np.asarray(z, dtype=np.float64)
        return z + self.displacement(z)


@dataclass(frozen=True)
class ResidualFlow:
    """Blocks in application order: blocks[0] acts first."""
    blocks: Tuple[ResidualBlock, ...] = ()

    def __post_init__(self):
        blocks = tuple(self.blocks)
        dims = {block.dim for block in blocks}
        if len(dims) > 1:
            raise InputError(f"Blocks act on different dimensions: {sorted(dims)}.")
        object.__setattr__(self, "blocks", blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[ResidualBlock]:
        return iter(self.blocks)
