"""
Unit tests for command configuration loading and validation.
"""

import json
import os

import pytest
from pydantic import ValidationError

from app import create_config
from app.config import LyapunovConfig, OrbitConfig, QuantumConfig, WignerConfig
from services.exceptions import ValidationFailure


class TestCreateConfig:
    """Test suite for create_config"""

    def test_defaults(self):
        """Test the built-in defaults"""
        config = create_config("orbit")
        assert isinstance(config, OrbitConfig)
        assert config.L == 2
        assert config.omega == 1.0
        assert config.output_root == "runs"

    def test_unknown_command(self):
        """Test that unknown commands are rejected"""
        with pytest.raises(ValidationFailure, match="Unknown command"):
            create_config("plot")

    def test_unknown_key(self):
        """Test that unknown keys are rejected"""
        with pytest.raises(ValidationError):
            create_config("wigner", overrides={'grid': 10})

    def test_twa_requires_seed(self):
        """Test that the TWA ensemble needs an explicit seed"""
        with pytest.raises(ValidationError, match="seed"):
            create_config("twa")
        assert create_config("twa", overrides={'seed': 7}).seed == 7

    def test_file_then_overrides(self, output_root):
        """Test that flags take precedence over the file"""
        path = os.path.join(output_root, "quantum.json")
        with open(path, 'w') as config_file:
            json.dump({'N': 12, 'boundary': "periodic", 't_end': 5.0}, config_file)
        config = create_config("quantum", path, {'N': 14, 'dt': None})
        assert isinstance(config, QuantumConfig)
        assert config.N == 14
        assert config.boundary == "periodic"
        assert config.t_end == 5.0
        assert config.dt == 0.1

    def test_environment_defaults(self, monkeypatch):
        """Test output root and basis cap from the environment"""
        monkeypatch.setenv("PXPSCARS_OUTPUT_DIR", "/tmp/pxp-runs")
        monkeypatch.setenv("PXPSCARS_MAX_BASIS_DIM", "5000")
        config = create_config("quantum")
        assert config.output_root == "/tmp/pxp-runs"
        assert config.max_basis_dim == 5000
        assert create_config("orbit", overrides={'output_root': "elsewhere"}).output_root == "elsewhere"

    def test_missing_file(self, output_root):
        """Test that an absent file is a validation failure"""
        with pytest.raises(ValidationFailure, match="not found"):
            create_config("orbit", os.path.join(output_root, "absent.json"))

    def test_invalid_json(self, output_root):
        """Test that a malformed file is a validation failure"""
        path = os.path.join(output_root, "broken.json")
        with open(path, 'w') as config_file:
            config_file.write("{N: 4")
        with pytest.raises(ValidationFailure, match="not valid JSON"):
            create_config("quantum", path)

    def test_non_object_file(self, output_root):
        """Test that the file must hold an object"""
        path = os.path.join(output_root, "list.json")
        with open(path, 'w') as config_file:
            json.dump([1, 2], config_file)
        with pytest.raises(ValidationFailure, match="JSON object"):
            create_config("orbit", path)


class TestModels:
    """Test suite for the command models"""

    def test_odd_cell_rejected(self):
        """Test that unit cells must be even"""
        with pytest.raises(ValidationError, match="even"):
            OrbitConfig(L=3)
        with pytest.raises(ValidationError):
            LyapunovConfig(Ls=[2, 5])

    def test_sweep_includes_headline(self):
        """Test that the headline L is always part of the sweep"""
        assert LyapunovConfig(L=6, Ls=[4, 2, 4]).sweep() == [2, 4, 6]
        assert LyapunovConfig(L=4).sweep() == [4]

    def test_quantum_positions(self):
        """Test that site and cut must lie inside the chain"""
        with pytest.raises(ValidationError, match="site"):
            QuantumConfig(N=8, site=8)
        with pytest.raises(ValidationError, match="cut"):
            QuantumConfig(N=8, cut=8)
        with pytest.raises(ValidationError):
            QuantumConfig(N=40)

    def test_wigner_nodes(self):
        """Test the quadrature node minimum"""
        with pytest.raises(ValidationError):
            WignerConfig(n1=8)
        with pytest.raises(ValidationError):
            WignerConfig(rydberg_site=3)

    def test_hash_excludes_output_root(self):
        """Test that the output location does not change the hashed configuration"""
        assert OrbitConfig(output_root="a").hashed_fields() == OrbitConfig(output_root="b").hashed_fields()
        assert 'output_root' not in OrbitConfig().hashed_fields()
