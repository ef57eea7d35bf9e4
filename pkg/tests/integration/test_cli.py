"""
Integration tests for the pxpscars command line.

Runs each command through click's test runner and inspects the run directories.
"""

import json
import os

import pytest
from click.testing import CliRunner

from app.commands import main
from services.artifacts import read_csv, read_json, write_json


def run_directory(root, command):
    """The single run directory a command created under root"""
    entries = [name for name in os.listdir(root) if name.startswith(f"{command}-")]
    assert len(entries) == 1
    return os.path.join(root, entries[0])


@pytest.fixture
def runner():
    return CliRunner()


class TestCommands:
    """Test suite for the command line"""

    def test_orbit(self, runner, output_root):
        """Test the orbit command and its revival frequency"""
        result = runner.invoke(main, ['orbit', '--output-root', output_root, '--dt', '0.01', '--t-end', '25'])
        assert result.exit_code == 0
        directory = run_directory(output_root, "orbit")
        summary = read_json(os.path.join(directory, "orbit.json"))
        assert 0.61 < summary['revival_frequency'] < 0.71
        assert summary['metadata']['command'] == "orbit"
        metadata, header, rows = read_csv(os.path.join(directory, "trajectory.csv"))
        assert header == ['t', 'theta_1', 'theta_2', 'rydberg_1', 'rydberg_2']
        assert len(rows) == 2501
        assert metadata['config_hash'] in directory

    def test_lyapunov_is_deterministic(self, runner, output_root):
        """Test that reruns give byte-identical artifacts"""
        arguments = ['lyapunov', '--L', '4', '--Ls', '2', '--steps-per-eighth', '20', '--omega-orbit', '0.3333']
        first = os.path.join(output_root, "first")
        second = os.path.join(output_root, "second")
        assert runner.invoke(main, arguments + ['--output-root', first]).exit_code == 0
        assert runner.invoke(main, arguments + ['--output-root', second]).exit_code == 0
        for name in ("ks.json", "spectrum.csv"):
            with open(os.path.join(run_directory(first, "lyapunov"), name), 'rb') as a, \
                    open(os.path.join(run_directory(second, "lyapunov"), name), 'rb') as b:
                assert a.read() == b.read()
        ks = read_json(os.path.join(run_directory(first, "lyapunov"), "ks.json"))
        assert ks['headline']['L'] == 4
        assert [entry['L'] for entry in ks['entries']] == [2, 4]

    def test_wigner(self, runner, output_root):
        """Test the Wigner grids and width file"""
        result = runner.invoke(main, ['wigner', '--output-root', output_root, '--n1', '128', '--n2', '128'])
        assert result.exit_code == 0
        directory = run_directory(output_root, "wigner")
        width = read_json(os.path.join(directory, "width.json"))
        assert 0.003 <= width['delta_theta0'] <= 0.05
        assert width['width_ratio'] > 5.0
        assert width['unconstrained_spread'] > 0.3
        _, header, rows = read_csv(os.path.join(directory, "wigner_constrained.csv"))
        assert header == ['theta1', 'theta2', 'W']
        assert len(rows) == 128 * 128

    def test_twa_requires_seed(self, runner, output_root):
        """Test that a TWA run without a seed is a validation error"""
        result = runner.invoke(main, ['twa', '--output-root', output_root])
        assert result.exit_code == 2
        assert "ValidationError" in result.output
        assert not os.listdir(output_root)

    def test_twa(self, runner, output_root):
        """Test a small seeded ensemble"""
        result = runner.invoke(main, ['twa', '--output-root', output_root, '--seed', '5', '--n-samples', '50',
                                      '--t-end', '1', '--dt-out', '0.5'])
        assert result.exit_code == 0
        directory = run_directory(output_root, "twa")
        summary = read_json(os.path.join(directory, "twa.json"))
        assert summary['n_samples'] == 50
        _, header, rows = read_csv(os.path.join(directory, "series.csv"))
        assert header == ['t', 'obs_mean', 'obs_stderr', 'n_alive']
        assert len(rows) == 3

    def test_quantum(self, runner, output_root):
        """Test a short exact quench"""
        result = runner.invoke(main, ['quantum', '--output-root', output_root, '--N', '6', '--t-end', '2',
                                      '--dt-out', '0.5'])
        assert result.exit_code == 0
        directory = run_directory(output_root, "quantum")
        for name in ("density.csv", "entropy.csv", "echo.csv", "fits.json", "run.json"):
            assert os.path.isfile(os.path.join(directory, name))
        assert read_json(os.path.join(directory, "run.json"))['dim'] == 21
        _, _, rows = read_csv(os.path.join(directory, "echo.csv"))
        assert float(rows[0][1]) == 1.0

    def test_quantum_too_large(self, runner, output_root, monkeypatch):
        """Test that the basis cap gives a validation exit status"""
        monkeypatch.setenv("PXPSCARS_MAX_BASIS_DIM", "10")
        result = runner.invoke(main, ['quantum', '--output-root', output_root, '--N', '8'])
        assert result.exit_code == 2
        assert "TooLarge" in result.output

    def test_report_without_inputs(self, runner, output_root):
        """Test that a report with nothing to read lists what is missing"""
        result = runner.invoke(main, ['report', '--output-root', output_root])
        assert result.exit_code == 2
        document = json.loads(result.output.strip().splitlines()[-1])
        assert document['error'] == "MissingInput"
        assert document['missing'] == ['ks', 'width', 'fits']

    def test_report(self, runner, output_root):
        """Test a report from prepared artifacts"""
        ks = write_json(os.path.join(output_root, "inputs", "ks.json"), {'headline': {'h_ks': 0.006}})
        fits = write_json(os.path.join(output_root, "inputs", "fits.json"), {
            'density': {'value': 0.025, 'stderr': 0.001},
            'entropy': {'value': 0.01, 'stderr': 0.001},
            'echo': {'value': 0.02, 'stderr': 0.001},
        })
        result = runner.invoke(main, ['report', '--output-root', output_root, '--ks', ks, '--fits', fits,
                                      '--delta-theta0', '0.01'])
        assert result.exit_code == 0
        report = read_json(os.path.join(run_directory(output_root, "report"), "report.json"))
        assert report['pass'] is True
        assert report['delta_theta0_source'] == "override"
        assert report['ratio'] == pytest.approx(19.19, abs=0.01)

    def test_report_from_wigner_run(self, runner, output_root):
        """Test a report that takes the width from a wigner run instead of an override"""
        assert runner.invoke(main, ['wigner', '--output-root', output_root, '--n1', '200', '--n2', '200']).exit_code == 0
        assert runner.invoke(main, ['lyapunov', '--output-root', output_root, '--L', '2', '--Ls', '2',
                                    '--omega-orbit', '0.32591']).exit_code == 0
        width = os.path.join(run_directory(output_root, "wigner"), "width.json")
        ks = os.path.join(run_directory(output_root, "lyapunov"), "ks.json")
        fits = write_json(os.path.join(output_root, "inputs", "fits.json"), {
            'density': {'value': 0.025, 'stderr': 0.001},
            'entropy': {'value': 0.015, 'stderr': 0.001},
            'echo': {'value': 0.02, 'stderr': 0.001},
        })
        result = runner.invoke(main, ['report', '--output-root', output_root, '--ks', ks, '--width', width,
                                      '--fits', fits])
        assert result.exit_code == 0
        report = read_json(os.path.join(run_directory(output_root, "report"), "report.json"))
        assert report['delta_theta0_source'] == "width"
        assert report['delta_theta0'] == read_json(width)['delta_theta0']
        assert 0.003 <= report['delta_theta0'] <= 0.05
        assert report['pass'] is True
        assert 5.0 <= report['ratio'] <= 50.0

    @pytest.mark.slow
    def test_headline_from_pipeline(self, runner, output_root):
        """Test the headline ratio with every input produced by the pipeline"""
        assert runner.invoke(main, ['wigner', '--output-root', output_root, '--n1', '200', '--n2', '200']).exit_code == 0
        assert runner.invoke(main, ['lyapunov', '--output-root', output_root, '--L', '2', '--Ls', '2']).exit_code == 0
        assert runner.invoke(main, ['quantum', '--output-root', output_root, '--N', '16', '--t-end', '150',
                                    '--dt-out', '0.1']).exit_code == 0
        paths = {name: os.path.join(run_directory(output_root, command), f"{name}.json")
                 for name, command in (("ks", "lyapunov"), ("width", "wigner"), ("fits", "quantum"))}
        result = runner.invoke(main, ['report', '--output-root', output_root, '--ks', paths['ks'],
                                      '--width', paths['width'], '--fits', paths['fits']])
        assert result.exit_code == 0
        report = read_json(os.path.join(run_directory(output_root, "report"), "report.json"))
        assert report['h_ks'] == pytest.approx(0.006, rel=0.5)
        assert report['pass'] is True
        assert 5.0 <= report['ratio'] <= 50.0
