"""
Unit tests for the semiclassical TDVP flow.

Tests the cell coefficients, the equations of motion, RK4 integration and the Z2 orbit.
"""

import time

import numpy as np
import pytest

from services.exceptions import NoReturnFound, SingularCell, ValidationFailure
from services.semiclassics import (
    ModelParams,
    Trajectory,
    UnitCellState,
    cell_coefficients,
    coefficient_gradient,
    eom_rhs_general,
    eom_rhs_l2,
    eom_rhs_mass_matrix,
    find_orbit_period,
    first_harmonic_orbit,
    harmonic_deviation,
    integrate,
    rk4_integrate,
    rydberg_proxy,
    theta_velocity,
    thetas_from_phi_cap,
    torus_distance,
    variational_energy,
    z2_initial_state,
)


class TestModelParams:
    """Test suite for ModelParams"""

    def test_defaults(self):
        """Test default Rabi frequency and cell size"""
        params = ModelParams()
        assert params.omega == 1.0
        assert params.L == 2

    @pytest.mark.parametrize("L", [0, 3, 5])
    def test_odd_or_empty_cell_rejected(self, L):
        """Test that odd or empty unit cells are rejected"""
        with pytest.raises(ValidationFailure, match="even"):
            ModelParams(L=L)

    def test_non_positive_omega_rejected(self):
        """Test that the Rabi frequency must be positive"""
        with pytest.raises(ValidationFailure, match="positive"):
            ModelParams(omega=0.0)


class TestCellCoefficients:
    """Test suite for cell_coefficients"""

    def test_l2_closed_form(self):
        """Test the L=2 coefficients against their closed forms"""
        theta1, theta2 = 0.4, 1.1
        coefficients = cell_coefficients([theta1, theta2])
        assert coefficients.pi_product == pytest.approx(np.sin(theta1) ** 2 * np.sin(theta2) ** 2)
        assert coefficients.a[0] == pytest.approx(np.cos(theta2) ** 2, abs=1e-15)
        assert coefficients.a[1] == pytest.approx(np.cos(theta1) ** 2, abs=1e-15)

    def test_all_ground_cell(self):
        """Test that theta = 0 everywhere gives A = 1 and Phi = 0"""
        coefficients = cell_coefficients(np.zeros(4))
        np.testing.assert_allclose(coefficients.A, 1.0)
        np.testing.assert_allclose(coefficients.phi_cap, 0.0)

    @pytest.mark.parametrize("L", [2, 4, 6])
    def test_recurrence(self, L, rng):
        """Test A_m sin^2(theta_m) = 1 - A_{m+1} at random points"""
        thetas = rng.uniform(0.1, 1.4, size=L)
        coefficients = cell_coefficients(thetas)
        lhs = coefficients.A * np.sin(thetas) ** 2
        np.testing.assert_allclose(lhs, 1.0 - np.roll(coefficients.A, -1), atol=1e-12)

    def test_singular_cell(self):
        """Test that a cell with every sine equal to one is singular"""
        with pytest.raises(SingularCell, match="singularity"):
            cell_coefficients([np.pi / 2, np.pi / 2])

    def test_odd_cell_rejected(self):
        """Test that an odd number of angles is rejected"""
        with pytest.raises(ValidationFailure):
            cell_coefficients([0.1, 0.2, 0.3])

    @pytest.mark.parametrize("L", [2, 4])
    def test_gradient_matches_finite_differences(self, L, rng):
        """Test the analytic coefficient gradient against central differences"""
        thetas = rng.uniform(0.2, 1.3, size=L)
        gradient = coefficient_gradient(thetas)
        step = 1e-6
        for j in range(L):
            shifted = np.zeros(L)
            shifted[j] = step
            numeric = (cell_coefficients(thetas + shifted).a - cell_coefficients(thetas - shifted).a) / (2 * step)
            np.testing.assert_allclose(gradient[:, j], numeric, atol=1e-7)

    def test_phi_cap_roundtrip(self, rng):
        """Test that thetas_from_phi_cap inverts Phi on (0, pi/2)"""
        thetas = rng.uniform(0.1, 1.4, size=4)
        recovered = thetas_from_phi_cap(cell_coefficients(thetas).phi_cap)
        np.testing.assert_allclose(recovered, thetas, atol=1e-9)


class TestEquationsOfMotion:
    """Test suite for the L=2 and general-L equations of motion"""

    def test_general_reduces_to_closed_form(self, rng):
        """Test that the general flow equals the L=2 closed form at random points"""
        points = rng.uniform(-np.pi, np.pi, size=(1000, 2))
        closed = np.stack(eom_rhs_l2(points[:, 0], points[:, 1]), axis=-1)
        general = theta_velocity(points, ModelParams(L=2))
        np.testing.assert_allclose(general, closed, rtol=1e-12, atol=1e-12)

    def test_z2_corner_velocity(self):
        """Test that only the Rydberg site moves at the Z2 corner"""
        velocity = eom_rhs_general(z2_initial_state(2), ModelParams(omega=2.0))
        np.testing.assert_allclose(velocity, [0.0, -1.0], atol=1e-15)

    def test_closed_form_limit_at_corner(self):
        """Test the closed form at the tan(pi/2) limit point"""
        dtheta1, dtheta2 = eom_rhs_l2(0.0, np.pi / 2)
        assert dtheta1 == pytest.approx(0.0, abs=1e-15)
        assert dtheta2 == pytest.approx(-0.5)

    def test_closed_form_singular_off_orbit(self):
        """Test that tan divergence away from the orbit raises"""
        with pytest.raises(SingularCell):
            eom_rhs_l2(0.5, np.pi / 2)

    def test_translation_covariance(self, rng):
        """Test that shifting the cell shifts the velocity"""
        thetas = rng.uniform(0.2, 1.3, size=6)
        params = ModelParams(L=6)
        np.testing.assert_allclose(theta_velocity(np.roll(thetas, 2), params),
                                   np.roll(theta_velocity(thetas, params), 2), atol=1e-13)

    def test_tiled_cell_matches_l2(self, rng):
        """Test that a tiled two-site pattern moves like the L=2 cell"""
        pair = rng.uniform(0.2, 1.3, size=2)
        tiled = theta_velocity(np.tile(pair, 4), ModelParams(L=8))
        np.testing.assert_allclose(tiled, np.tile(theta_velocity(pair, ModelParams(L=2)), 4), atol=1e-13)

    def test_mass_matrix_form(self, rng):
        """Test that M^{-1} u reproduces the general flow"""
        thetas = rng.uniform(0.2, 1.3, size=4)
        state = UnitCellState(thetas)
        params = ModelParams(L=4)
        np.testing.assert_allclose(eom_rhs_mass_matrix(state, params), eom_rhs_general(state, params),
                                   rtol=1e-10, atol=1e-12)

    def test_non_strict_marks_singular_rows(self):
        """Test that non-strict evaluation returns NaN for singular rows only"""
        batch = np.array([[0.3, 0.7], [np.pi / 2, np.pi / 2]])
        velocity = theta_velocity(batch, ModelParams(), strict=False)
        assert np.all(np.isfinite(velocity[0]))
        assert np.all(np.isnan(velocity[1]))

    def test_strict_raises_on_singular_rows(self):
        """Test that strict evaluation raises on a singular row"""
        with pytest.raises(SingularCell):
            theta_velocity(np.array([np.pi / 2, np.pi / 2]), ModelParams())

    def test_energy_vanishes_without_phases(self, rng):
        """Test that the variational energy is zero on the phi = 0 manifold"""
        state = UnitCellState(rng.uniform(0.2, 1.3, size=4))
        assert variational_energy(state, ModelParams(L=4)) == 0.0

    def test_params_mismatch(self):
        """Test that a state and params with different L are rejected"""
        with pytest.raises(ValidationFailure, match="L=4"):
            eom_rhs_general(z2_initial_state(2), ModelParams(L=4))


class TestIntegration:
    """Test suite for RK4 integration"""

    def test_zero_time(self):
        """Test that t_end = 0 returns only the initial point"""
        trajectory = integrate(z2_initial_state(2), ModelParams(), 0.0, 0.1)
        assert len(trajectory) == 1
        np.testing.assert_array_equal(trajectory.thetas[0], [0.0, np.pi / 2])

    def test_last_step_lands_on_t_end(self):
        """Test that the final step is shortened to hit t_end"""
        trajectory = integrate(UnitCellState([0.3, 0.7]), ModelParams(), 0.25, 0.1)
        np.testing.assert_allclose(trajectory.times, [0.0, 0.1, 0.2, 0.25])

    def test_invalid_step(self):
        """Test that a non-positive step is rejected"""
        with pytest.raises(ValidationFailure, match="positive"):
            integrate(z2_initial_state(2), ModelParams(), 1.0, 0.0)

    def test_fourth_order_convergence(self):
        """Test that halving the step shrinks the error about sixteenfold"""
        params = ModelParams()
        start = UnitCellState([0.3, 0.7])
        ends = [integrate(start, params, 2.0, dt).thetas[-1] for dt in (0.1, 0.05, 0.025)]
        ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
        assert 16.0 * 0.8 < ratio < 16.0 * 1.2

    def test_rotation_is_integrated_exactly_enough(self):
        """Test RK4 on a uniform rotation with a known period"""
        def rotation(thetas, params):
            return np.full_like(thetas, 0.5)

        trajectory = rk4_integrate(rotation, np.zeros(2), ModelParams(), 4.0, 0.01)
        np.testing.assert_allclose(trajectory.thetas[-1], [2.0, 2.0], atol=1e-12)

    def test_batch_integration(self):
        """Test that a batch integrates each row independently"""
        params = ModelParams()
        batch = np.array([[0.3, 0.7], [0.2, 1.0]])
        together = rk4_integrate(theta_velocity, batch, params, 1.0, 0.05).thetas[-1]
        alone = integrate(UnitCellState([0.2, 1.0]), params, 1.0, 0.05).thetas[-1]
        np.testing.assert_allclose(together[1], alone, atol=1e-12)

    def test_two_site_path_matches_general_flow(self):
        """Test that the scalar two-site stepper follows the array stepper"""
        params = ModelParams()
        start = np.array([0.3, 0.7])
        fast = rk4_integrate(theta_velocity, start, params, 5.0, 0.01)
        general = rk4_integrate(lambda thetas, p: theta_velocity(thetas, p), start, params, 5.0, 0.01)
        np.testing.assert_array_equal(fast.times, general.times)
        np.testing.assert_allclose(fast.thetas, general.thetas, atol=1e-12)

    def test_two_site_path_keeps_singular_checks(self):
        """Test that the scalar stepper still refuses the coordinate singularity"""
        with pytest.raises(SingularCell):
            integrate(UnitCellState([np.pi / 2, np.pi / 2]), ModelParams(), 1.0, 0.1)

    def test_long_two_site_orbit_is_fast(self):
        """Test that the Z2 orbit to t = 40 at dt = 1e-3 takes under a second"""
        start = time.perf_counter()
        trajectory = integrate(z2_initial_state(2), ModelParams(), 40.0, 1e-3)
        assert time.perf_counter() - start < 1.0
        assert len(trajectory) == 40001

    def test_rydberg_proxy(self):
        """Test the sin^2 occupation proxy"""
        np.testing.assert_allclose(rydberg_proxy([0.0, np.pi / 2]), [0.0, 1.0], atol=1e-15)


class TestOrbit:
    """Test suite for the Z2 periodic orbit"""

    def test_revival_frequency(self):
        """Test the Z2 revival frequency against Omega/1.51"""
        trajectory = integrate(z2_initial_state(2), ModelParams(), 25.0, 1e-2)
        info = find_orbit_period(trajectory)
        assert 0.61 < info.revival_frequency < 0.71
        assert info.frequency == pytest.approx(2 * np.pi / info.period)

    def test_orbit_closes(self):
        """Test the Z2 period and closure at the reference step"""
        trajectory = integrate(z2_initial_state(2), ModelParams(), 40.0, 1e-3)
        info = find_orbit_period(trajectory)
        assert info.period == pytest.approx(19.279, abs=2e-3)
        assert info.closure_error < 1e-5

    def test_first_harmonic_tracks_orbit(self):
        """Test that the first harmonic stays close to the integrated orbit"""
        trajectory = integrate(z2_initial_state(2), ModelParams(), 25.0, 1e-2)
        info = find_orbit_period(trajectory)
        deviation, shift = harmonic_deviation(trajectory, info.frequency)
        assert deviation < 0.5
        assert abs(shift) <= info.period / 8 + 1e-12

    def test_first_harmonic_starts_at_corner(self):
        """Test that the first harmonic passes through the Z2 corner at t = 0"""
        assert first_harmonic_orbit(0.0, 0.33) == pytest.approx((0.0, np.pi / 2))

    def test_synthetic_rotation_period(self):
        """Test period detection on a uniform rotation of the torus"""
        def rotation(thetas, params):
            return np.array([1.0, 0.0]) * np.ones_like(thetas)

        trajectory = rk4_integrate(rotation, np.array([0.1, 0.2]), ModelParams(), 10.0, 0.01)
        info = find_orbit_period(trajectory)
        assert info.period == pytest.approx(2 * np.pi, abs=1e-4)
        assert info.closure_error < 1e-4

    def test_no_return(self):
        """Test that a trajectory that never comes back raises"""
        times = np.linspace(0.0, 1.0, 11)
        trajectory = Trajectory(times, np.stack([times, times], axis=-1))
        with pytest.raises(NoReturnFound):
            find_orbit_period(trajectory)

    def test_torus_distance_wraps(self):
        """Test that angle differences are wrapped before measuring"""
        assert torus_distance(np.array([np.pi - 0.1, 0.0]), np.array([-np.pi + 0.1, 0.0])) == pytest.approx(0.2)
