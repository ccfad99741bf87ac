"""Shared setup for every command: config -> certified feature map and seeded clouds."""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from resflow.errors import CertificationError
from resflow.feature_maps import FeatureMap, build_feature_map, certify_constants
from resflow.measures import SOURCE_STREAM, TARGET_STREAM, child_seed, sample_distribution
from resflow.models import ParticleCloud
from resflow.schemas import CertificationReport, ExperimentConfig


@dataclass(frozen=True)
class Experiment:
    config: ExperimentConfig
    feature_map: FeatureMap
    certification: CertificationReport


def seed_int(seed: np.random.SeedSequence) -> int:
    """A plain integer seed drawn from a seed sequence, for reports and sub-samplers."""
    return int(seed.generate_state(1, dtype=np.uint32)[0])


def with_seed(config: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    return config if seed is None else config.model_copy(update={"seed": seed})


def prepare_experiment(config: ExperimentConfig) -> Experiment:
    """Build the feature map and certify its declared constants; refuse to run otherwise."""
    feature_map = build_feature_map(config.feature_map, config.dim)
    report = certify_constants(feature_map, config.verification.certify_budget, config.seed)
    if not report.passed:
        raise CertificationError(
            f"Declared constants of {feature_map!r} fail certification: {'; '.join(report.violations)}",
            report=report,
        )
    logging.info(f"Prepared {feature_map!r} with constants {feature_map.constants.model_dump()}")
    return Experiment(config=config, feature_map=feature_map, certification=report)


def sample_pair(config: ExperimentConfig, n: int, *path: int) -> Tuple[ParticleCloud, ParticleCloud]:
    """
    Source and target clouds from the streams under `path`.
    Identical source and target descriptors share one cloud.
    """
    source = sample_distribution(config.source, n, child_seed(config.seed, *path, SOURCE_STREAM))
    if config.target == config.source:
        return source, source
    target = sample_distribution(config.target, n, child_seed(config.seed, *path, TARGET_STREAM))
    return source, target
