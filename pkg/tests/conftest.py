import json
from pathlib import Path
from typing import Callable

import numpy as np
import pytest
from click.testing import CliRunner

from resflow.feature_maps import AffineFeatureMap, BoundedSineFeatureMap
from resflow.main import cli
from resflow.models import ParticleCloud

# --- Feature Map Fixtures ---

@pytest.fixture
def identity_map() -> AffineFeatureMap:
    """phi(z) = z on R^1."""
    return AffineFeatureMap([[1.0]])


@pytest.fixture
def sine_map_1d() -> BoundedSineFeatureMap:
    """phi(z) = (z, 0.5 sin z)."""
    return BoundedSineFeatureMap(0.5, [[1.0]])


@pytest.fixture
def sine_map_2d() -> BoundedSineFeatureMap:
    return BoundedSineFeatureMap(0.5, [[0.8, 0.0], [0.0, 0.6]])


# --- Cloud Fixtures ---

@pytest.fixture
def point_mass_pair():
    """Four particles at 0 and four at 1."""
    return ParticleCloud(np.zeros((4, 1))), ParticleCloud(np.ones((4, 1)))


@pytest.fixture
def gaussian_pair():
    """A standard Gaussian cloud and a translated copy, 2000 particles each."""
    rng = np.random.default_rng(7)
    q = ParticleCloud(rng.standard_normal((2000, 2)))
    p = ParticleCloud(rng.standard_normal((2000, 2)) + np.array([1.0, 0.5]))
    return q, p


# --- Config Fixtures ---

@pytest.fixture
def toy_config() -> dict:
    """Identity map moving a point mass at 0 onto a point mass at 1."""
    return {
        "dim": 1,
        "feature_map": {"kind": "affine", "matrix": [[1.0]]},
        "source": {"kind": "point_mass", "x": [0.0]},
        "target": {"kind": "point_mass", "x": [1.0]},
        "n_particles": 4,
        "seed": 0,
        "schedule": "second_order",
        "delta": 0.001,
        "verification": {
            "trials": 5,
            "n_particles": 4,
            "pair_samples": 200,
            "estimator_seeds": 3,
            "estimator_particles": 4,
            "certify_budget": 100,
        },
    }


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[dict], Path]:
    """Write a config dict to a JSON file under tmp_path and return its path."""
    def _write(config: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(config))
        return path
    return _write


# --- CLI Fixtures ---

@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def invoke(runner: CliRunner):
    """Run the resflow CLI with the given arguments."""
    def _invoke(*args: str):
        return runner.invoke(cli, [str(a) for a in args])
    return _invoke
