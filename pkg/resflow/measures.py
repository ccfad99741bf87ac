"""
Particle clouds, seeded samplers and feature-space MMD.

All estimators are the biased plug-in (V-statistic) form: the squared norm of a
difference of empirical feature means.
"""
import logging
from typing import Union

import numpy as np

from resflow.errors import ConfigError, InputError, dimension_mismatch
from resflow.feature_maps import Array, FeatureMap
from resflow.models import ParticleCloud
from resflow.storage import read_cloud_csv
from resflow.schemas import (
    CsvSpec,
    GaussianMixtureSpec,
    GaussianSpec,
    PointMassSpec,
    PointsSpec,
    RingSpec,
    UniformBoxSpec,
)

# psi(p, q) and feature means are plain vectors in R^{d_phi}
FeatureMean = Array
SeedLike = Union[int, np.random.SeedSequence]

PSD_TOL = 1e-12
WEIGHT_TOL = 1e-9

# Spawn keys for independent random streams of one experiment
SOURCE_STREAM = 0
TARGET_STREAM = 1
TRIAL_STREAM = 2
ESTIMATOR_STREAM = 3
SWEEP_STREAM = 4


def child_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Deterministic child stream of a master seed, addressed by an integer path."""
    return np.random.SeedSequence(entropy=seed, spawn_key=tuple(path))


def _covariance_factor(mean, covariance) -> Array:
    d = len(mean)
    cov = np.eye(d) if covariance is None else np.array(covariance, dtype=np.float64)
    if cov.shape != (d, d):
        raise ConfigError(f"Covariance must be {d} x {d}, got shape {cov.shape}.")
    if not np.allclose(cov, cov.T, rtol=0, atol=PSD_TOL):
        raise ConfigError("Covariance must be symmetric.")
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval.min() < -PSD_TOL * max(1.0, float(np.abs(eigval).max())):
        raise ConfigError(f"Covariance is not positive semi-definite (min eigenvalue {eigval.min():.3g}).")
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def sample_distribution(spec, n: int, seed: SeedLike) -> ParticleCloud:
    """
    Draw n particles from a distribution descriptor.
    Deterministic given (spec, n, seed). `points` and `csv` descriptors ignore n.
    """
    if n < 1:
        raise InputError(f"Particle count must be at least 1, got {n}.")
    rng = np.random.default_rng(seed)

    if isinstance(spec, PointMassSpec):
        points = np.tile(np.array(spec.x, dtype=np.float64), (n, 1))
    elif isinstance(spec, GaussianSpec):
        factor = _covariance_factor(spec.mean, spec.covariance)
        points = np.array(spec.mean) + rng.standard_normal((n, len(spec.mean))) @ factor.T
    elif isinstance(spec, GaussianMixtureSpec):
        weights = np.array(spec.weights, dtype=np.float64)
        if len(weights) != len(spec.components):
            raise ConfigError("Mixture needs exactly one weight per component.")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"Mixture weights must be non-negative and sum to 1, got sum {weights.sum()!r}.")
        d = spec.dimension()
        if any(len(c.mean) != d for c in spec.components):
            raise ConfigError("Mixture components must share one dimension.")
        factors = np.stack([_covariance_factor(c.mean, c.covariance) for c in spec.components])
        means = np.array([c.mean for c in spec.components])
        labels = rng.choice(len(weights), size=n, p=weights)
        noise = rng.standard_normal((n, d))
        points = means[labels] + np.einsum("nij,nj->ni", factors[labels], noise)
    elif isinstance(spec, UniformBoxSpec):
        lo, hi = np.array(spec.lo), np.array(spec.hi)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise ConfigError("uniform_box needs lo and hi of equal length with lo <= hi.")
        points = rng.uniform(lo, hi, size=(n, len(lo)))
    elif isinstance(spec, RingSpec):
        center = np.zeros(spec.dim) if spec.center is None else np.array(spec.center)
        if center.shape != (spec.dim,):
            raise ConfigError(f"Ring center must have length {spec.dim}.")
        angle = rng.uniform(0.0, 2 * np.pi, size=n)
        radius = spec.radius + spec.noise * rng.standard_normal(n)
        points = spec.noise * rng.standard_normal((n, spec.dim))
        points[:, 0] = radius * np.cos(angle)
        points[:, 1] = radius * np.sin(angle)
        points += center
    elif isinstance(spec, PointsSpec):
        points = np.array(spec.rows, dtype=np.float64)
    elif isinstance(spec, CsvSpec):
        return read_cloud_csv(spec.path)
    else:
        raise ConfigError(f"Unknown distribution spec: {spec!r}")

    return ParticleCloud(points)


def _check_dim(cloud: ParticleCloud, feature_map: FeatureMap) -> None:
    if cloud.d != feature_map.dim_in:
        raise dimension_mismatch(feature_map.dim_in, cloud.d, what="cloud")


def feature_mean(cloud: ParticleCloud, feature_map: FeatureMap) -> FeatureMean:
    """(1/n) * sum_k phi(z_k), reduced with numpy's fixed pairwise summation."""
    _check_dim(cloud, feature_map)
    return feature_map.eval_phi(cloud.points).mean(axis=0)


def psi(p: ParticleCloud, q: ParticleCloud, feature_map: FeatureMap) -> FeatureMean:
    """Witness vector E_p phi - E_q phi; its norm is MMD(q, p)."""
    return feature_mean(p, feature_map) - feature_mean(q, feature_map)


def mmd_squared(q: ParticleCloud, p: ParticleCloud, feature_map: FeatureMap) -> float:
    diff = feature_mean(q, feature_map) - feature_mean(p, feature_map)
    return float(diff @ diff)


def mmd_squared_kernel(q: ParticleCloud, p: ParticleCloud, feature_map: FeatureMap) -> float:
    """
    Double-sum form with K(x, z) = phi(x)^T phi(z):
    mean K(q, q) + mean K(p, p) - 2 mean K(q, p). Quadratic in n; used as an oracle.
    """
    _check_dim(q, feature_map)
    _check_dim(p, feature_map)
    phi_q = feature_map.eval_phi(q.points)
    phi_p = feature_map.eval_phi(p.points)
    value = (phi_q @ phi_q.T).mean() + (phi_p @ phi_p.T).mean() - 2.0 * (phi_q @ phi_p.T).mean()
    if value < 0:
        logging.debug(f"Kernel-form MMD^2 rounded below zero ({value!r}).")
    return float(value)
