"""
Integration tests for the complete workflow.

Chains the orbit, tangent-space, Wigner, quantum and report stages through the library.
"""

import numpy as np
import pytest

from services.analysis import build_report
from services.lyapunov import ks_entropy, lyapunov_sweep, z2_ks_entropy
from services.quantum import build_basis, evolve, fit_decay_rate, observable_series, mps_overlap_series, z2_state
from services.semiclassics import ModelParams, find_orbit_period, integrate, z2_initial_state
from services.wigner import peak_width, twa_observable_series, twa_sample, wigner_grid


class TestCompleteWorkflow:
    """Test suite for complete workflow"""

    @pytest.fixture(scope="class")
    def orbit(self):
        trajectory = integrate(z2_initial_state(2), ModelParams(), 25.0, 1e-2)
        return trajectory, find_orbit_period(trajectory)

    def test_orbit_feeds_tangent_space(self, orbit):
        """Test that the measured orbit frequency drives the monodromy sweep"""
        _, info = orbit
        results = lyapunov_sweep([2, 4], info.frequency, steps_per_eighth=20)
        for spectrum, summary in results:
            assert np.all(np.isfinite(spectrum.exponents))
            assert summary['h_ks'] == pytest.approx(z2_ks_entropy(spectrum))
            assert summary['h_ks_total'] == pytest.approx(ks_entropy(spectrum))
            assert summary['h_ks'] >= 0

    def test_orbit_matches_quantum_state(self, orbit):
        """Test that the orbit angles describe the exact state at early times"""
        trajectory, _ = orbit
        basis = build_basis(10)
        states = evolve(basis, z2_state(basis), [0.0, 0.2])
        overlaps = mps_overlap_series(basis, trajectory.thetas[[0, 20]], states)
        assert overlaps[0] == pytest.approx(1.0)
        assert overlaps[1] > 0.95

    def test_wigner_stage(self):
        """Test grid, width and a short truncated-Wigner evolution"""
        width = peak_width(wigner_grid(128, 128))
        assert 0.003 <= width.delta_theta0 <= 0.05
        ensemble = twa_sample(11, 200)
        series = twa_observable_series(ensemble, ModelParams(), [0.0, 0.5, 1.0])
        assert len(ensemble) == 200
        assert series.n_alive[0] == 200
        assert np.isfinite(series.mean[0])

    def test_quantum_to_report(self):
        """Test the quantum series and the final comparison"""
        basis = build_basis(10)
        times = np.linspace(0.0, 4.0, 41)
        states = evolve(basis, z2_state(basis), times)
        echo = observable_series(basis, states, times, "echo")
        entropy = observable_series(basis, states, times, "entropy")
        assert echo.values[0] == pytest.approx(1.0)
        assert echo.values[10] < 1.0

        entropy_fit = fit_decay_rate(entropy, kind="linear")
        assert entropy_fit.rate > 0
        rates = {
            'density': {'value': 0.03, 'stderr': 0.0},
            'entropy': entropy_fit.to_dict(),
            'echo': {'value': 0.02, 'stderr': 0.0},
        }
        report = build_report(0.006, 0.01, rates)
        assert report.ratio == pytest.approx(max(0.03, entropy_fit.rate) / report.escape_rate)
        assert report.to_dict()['rates']['entropy']['value'] == entropy_fit.rate
