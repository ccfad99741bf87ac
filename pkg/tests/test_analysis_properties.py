"""
Property-based tests for the Delta decomposition and the bound checks built on it.
"""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from resflow.analysis import (
    certified_step_limit,
    check_descent,
    check_gradient_field,
    check_lemma1,
    check_lemma2,
    check_lemma3,
    decompose_delta,
    delta_exact,
    delta_first_order,
    taylor_order_fit,
)
from resflow.errors import InputError, NumericError
from resflow.flow import schedule_second_order
from resflow.measures import mmd_squared, psi
from resflow.models import ParticleCloud, ResidualBlock
from tests.generators import (
    affine_map_strategy,
    cloud_pair_strategy,
    feature_map_strategy,
    psi_strategy,
    seed_strategy,
    sine_map_strategy,
    translated_pair_strategy,
)


def _certified_step(fmap, witness, fraction: float) -> float:
    norm = float(np.linalg.norm(witness))
    if fmap.constants.L_Jac == 0 or norm == 0:
        return 0.1
    return min(0.1, fraction * 0.5 / (math.sqrt(fmap.dim_in * fmap.dim_out) * fmap.constants.L_Jac * norm))


def _translated_sine_pair(data, fmap):
    """A translated Gaussian pair large enough that sampling noise stays well below the shift."""
    return data.draw(translated_pair_strategy(fmap.dim_in, min_size=500, max_size=1000, min_shift=0.5))


class TestDeltaProperties:
    """Property-based tests for Delta, Delta_1 and Delta_2."""

    @settings(max_examples=50, deadline=None)
    @given(data=st.data(), fmap=feature_map_strategy)
    def test_decomposition_consistent_property(self, data, fmap):
        """
        Property: Delta equals the drop in MMD^2 across the block, and Delta_2 = Delta - Delta_1.
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        witness = psi(p, q, fmap)
        block = ResidualBlock(epsilon=_certified_step(fmap, witness, 0.5), psi=witness, feature_map=fmap)
        parts = decompose_delta(q, p, block)

        assert parts.delta2 == parts.delta - parts.delta1
        assert parts.delta == delta_exact(q, p, block)
        assert parts.delta1 == delta_first_order(q, p, block)
        assert parts.mmd_sq_before == mmd_squared(q, p, fmap)
        assert parts.mmd_sq_before - parts.mmd_sq_after == pytest.approx(parts.delta, rel=1e-8, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(data=st.data(), fmap=feature_map_strategy)
    def test_first_order_term_nonnegative_property(self, data, fmap):
        """
        Property: Delta_1 = 2 eps mean |J^T psi|^2 is never negative.
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        witness = psi(p, q, fmap)
        block = ResidualBlock(epsilon=_certified_step(fmap, witness, 0.5), psi=witness, feature_map=fmap)
        assert delta_first_order(q, p, block) >= 0.0

    @settings(max_examples=20, deadline=None)
    @given(data=st.data(), fmap=feature_map_strategy)
    def test_mismatched_witness_rejected_property(self, data, fmap):
        """
        Property: Delta_1 refuses a block whose psi is not the witness of the given clouds.
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        witness = psi(p, q, fmap)
        block = ResidualBlock(epsilon=0.01, psi=np.zeros_like(witness), feature_map=fmap)
        assume(np.linalg.norm(witness) > 1e-6)
        with pytest.raises(InputError):
            delta_first_order(q, p, block)


class TestBoundProperties:
    """Property-based tests for the three per-block bounds and the descent inequality."""

    @settings(max_examples=50, deadline=None)
    @given(data=st.data(), fmap=affine_map_strategy(), eps=st.floats(min_value=1e-4, max_value=1.0))
    def test_lemma1_holds_for_affine_maps_property(self, data, fmap, eps):
        """
        Property: For affine maps psi lies in the range of A, so Delta_1 >= 2 eps b MMD^2
        for arbitrary clouds.
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        check = check_lemma1(q, p, fmap, eps)
        assert check.satisfied, check

    @settings(max_examples=50, deadline=None)
    @given(data=st.data(), fmap=feature_map_strategy)
    def test_lemma3_remainder_bound_property(self, data, fmap):
        """
        Property: For any clouds and certified step, |Delta_2| stays below
        eps^2 MMD^2 B (B + |psi| sqrt(d_phi) C (1 + eps L_feat sqrt(B))).
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        eps = _certified_step(fmap, psi(p, q, fmap), data.draw(st.floats(min_value=0.01, max_value=0.99)))
        check = check_lemma3(q, p, fmap, eps)
        assert check.satisfied, check
        assert check.lhs >= 0.0

    @settings(max_examples=30, deadline=None)
    @given(data=st.data(), fmap=feature_map_strategy, seed=seed_strategy)
    def test_lemma2_reports_certificate_as_rhs_property(self, data, fmap, seed):
        """
        Property: The Lipschitz check compares against the block's own certificate.
        """
        witness = data.draw(psi_strategy(fmap.dim_out))
        block = ResidualBlock(epsilon=_certified_step(fmap, witness, 0.9), psi=witness, feature_map=fmap)
        check = check_lemma2(block, pair_samples=500, seed=seed)
        assert check.rhs == block.lipschitz_bound()
        assert check.satisfied
        assert check.seed == seed

    @settings(max_examples=50, deadline=None)
    @given(data=st.data(), fmap=affine_map_strategy(), fraction=st.floats(min_value=0.01, max_value=1.0))
    def test_descent_for_affine_maps_property(self, data, fmap, fraction):
        """
        Property: For affine maps and eps <= b / 2B^2, Delta >= b eps MMD^2.
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        c = fmap.constants
        eps = fraction * c.b / (2.0 * c.B**2)
        check = check_descent(q, p, fmap, eps)
        assert check.satisfied, check

    @settings(max_examples=30, deadline=None)
    @given(data=st.data(), fmap=feature_map_strategy, seed=seed_strategy)
    def test_gradient_field_matches_differences_property(self, data, fmap, seed):
        """
        Property: J^T psi agrees with central differences of psi^T phi to 1e-6.
        """
        witness = data.draw(psi_strategy(fmap.dim_out))
        check = check_gradient_field(fmap, witness, n_points=50, seed=seed)
        assert check.name == "gradient_fd"
        assert check.satisfied, check

    @settings(max_examples=30, deadline=None)
    @given(data=st.data(), fmap=sine_map_strategy())
    def test_lemma1_holds_for_sine_maps_on_translated_pairs_property(self, data, fmap):
        """
        Property: For bounded-sine maps and a translated Gaussian pair, the sine part of psi
        follows the translation, so Delta_1 >= 2 eps b MMD^2 although d_phi > d.
        """
        q, p = _translated_sine_pair(data, fmap)
        eps = _certified_step(fmap, psi(p, q, fmap), 0.5)
        check = check_lemma1(q, p, fmap, eps)
        assert check.satisfied, check

    @settings(max_examples=30, deadline=None)
    @given(data=st.data(), fmap=sine_map_strategy(), fraction=st.floats(min_value=0.01, max_value=0.5))
    def test_descent_for_sine_maps_on_translated_pairs_property(self, data, fmap, fraction):
        """
        Property: For bounded-sine maps, a translated Gaussian pair and eps <= eps_Delta,
        Delta >= b eps MMD^2.
        """
        q, p = _translated_sine_pair(data, fmap)
        witness = psi(p, q, fmap)
        norm = float(np.linalg.norm(witness))
        eps_delta = schedule_second_order(fmap.constants, norm, 0.5, fmap.dim_in, fmap.dim_out).epsilon_delta
        eps = fraction * min(eps_delta, _certified_step(fmap, witness, 0.99))
        check = check_descent(q, p, fmap, eps)
        assert check.satisfied, check


class TestTaylorProperties:
    """Property-based tests for the remainder order fit."""

    @settings(max_examples=30, deadline=None)
    @given(data=st.data(), fmap=affine_map_strategy())
    def test_affine_remainder_is_exactly_quadratic_property(self, data, fmap):
        """
        Property: For affine maps Delta_2 = -eps^2 |A A^T psi|^2, so the fitted slope is 2.
        """
        q, p = data.draw(cloud_pair_strategy(fmap.dim_in))
        assume(np.linalg.norm(psi(p, q, fmap)) > 0.1)
        fit = taylor_order_fit(q, p, fmap, [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
        assert fit.slope == pytest.approx(2.0, abs=1e-3)
        assert fit.excluded == 0
        assert len(fit.epsilons) == len(fit.remainders) == 5

    @settings(max_examples=20, deadline=None)
    @given(data=st.data(), fmap=sine_map_strategy())
    def test_sine_remainder_is_quadratic_property(self, data, fmap):
        """
        Property: For bounded-sine maps on a translated Gaussian pair, the fitted order
        of |Delta_2| lies in [1.9, 2.1].
        """
        q, p = _translated_sine_pair(data, fmap)
        fit = taylor_order_fit(q, p, fmap, [2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4])
        assert 1.9 <= fit.slope <= 2.1, fit


# --- Examples ---

def test_toy_decomposition(identity_map, point_mass_pair):
    q, p = point_mass_pair
    block = ResidualBlock(epsilon=0.1, psi=[1.0], feature_map=identity_map)
    parts = decompose_delta(q, p, block)
    assert parts.delta == pytest.approx(0.19, abs=1e-15)
    assert parts.delta1 == pytest.approx(0.2, abs=1e-15)
    assert parts.delta2 == pytest.approx(-0.01, abs=1e-15)
    assert parts.mmd_sq_after == pytest.approx(0.81, abs=1e-15)


def test_toy_bounds_are_tight(identity_map, point_mass_pair):
    q, p = point_mass_pair
    lemma1 = check_lemma1(q, p, identity_map, 0.1)
    lemma3 = check_lemma3(q, p, identity_map, 0.1)
    assert lemma1.satisfied and lemma1.rhs == pytest.approx(0.2)
    assert lemma3.satisfied and lemma3.rhs == pytest.approx(0.01)
    assert abs(lemma1.slack) < 1e-12
    assert abs(lemma3.slack) < 1e-12
    descent = check_descent(q, p, identity_map, 0.1)
    assert descent.satisfied and descent.lhs == pytest.approx(0.19)


def test_sine_bounds_on_gaussian_pair(sine_map_2d, gaussian_pair):
    """Test Lemma 1, Lemma 3, descent and the Taylor order on the shipped sine map."""
    q, p = gaussian_pair
    for check in (
        check_lemma1(q, p, sine_map_2d, 0.01),
        check_lemma3(q, p, sine_map_2d, 0.01),
        check_descent(q, p, sine_map_2d, 0.01),
    ):
        assert check.satisfied, check
    fit = taylor_order_fit(q, p, sine_map_2d, [1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4])
    assert 1.9 <= fit.slope <= 2.1


def test_constant_jacobian_block_has_zero_quotients(identity_map):
    block = ResidualBlock(epsilon=0.1, psi=[1.0], feature_map=identity_map)
    check = check_lemma2(block, pair_samples=100, seed=0)
    assert check.lhs == 0.0
    assert check.rhs == 0.0
    assert check.satisfied


def test_toy_taylor_fit(identity_map, point_mass_pair):
    q, p = point_mass_pair
    fit = taylor_order_fit(q, p, identity_map, [1e-1, 1e-2, 1e-3, 1e-4])
    assert fit.slope == pytest.approx(2.0, abs=1e-6)
    assert fit.intercept == pytest.approx(0.0, abs=1e-5)


def test_taylor_grid_validation(identity_map, point_mass_pair):
    q, p = point_mass_pair
    with pytest.raises(InputError):
        taylor_order_fit(q, p, identity_map, [1e-1, 1e-2, 1e-3])
    with pytest.raises(InputError):
        taylor_order_fit(q, p, identity_map, [1e-4, 1e-3, 1e-2, 1e-1])
    with pytest.raises(InputError):
        taylor_order_fit(q, p, identity_map, [0.1, 0.09, 0.08, 0.07])
    with pytest.raises(InputError):
        taylor_order_fit(q, p, identity_map, [0.1, 0.01, 0.0, -0.01])


def test_taylor_fit_below_roundoff_floor(identity_map, point_mass_pair):
    q, p = point_mass_pair
    with pytest.raises(NumericError):
        taylor_order_fit(q, p, identity_map, [1e-7, 1e-8, 1e-9, 1e-10])


def test_certified_step_limit(identity_map, sine_map_1d):
    """Test 1/2 / (sqrt(d d_phi) L_Jac |psi|), infinite for a constant Jacobian."""
    assert certified_step_limit(sine_map_1d, 1.0) == pytest.approx(1.0 / math.sqrt(2))
    assert certified_step_limit(sine_map_1d, 0.0) == math.inf
    assert certified_step_limit(identity_map, 5.0) == math.inf
    limit = certified_step_limit(sine_map_1d, 1.0)
    block = ResidualBlock(epsilon=0.99 * limit, psi=[1.0, 0.0], feature_map=sine_map_1d)
    assert block.lipschitz_bound() == pytest.approx(0.495)


def test_lemma2_rejects_empty_sample(identity_map):
    block = ResidualBlock(epsilon=0.1, psi=[1.0], feature_map=identity_map)
    with pytest.raises(InputError):
        check_lemma2(block, pair_samples=0, seed=0)


def test_cloud_dimension_checked(identity_map):
    with pytest.raises(InputError):
        check_lemma1(ParticleCloud(np.zeros((2, 2))), ParticleCloud(np.zeros((2, 2))), identity_map, 0.1)
