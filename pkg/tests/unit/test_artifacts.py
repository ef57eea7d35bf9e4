"""
Unit tests for the CSV and JSON artifact writers.
"""

import os

import numpy as np
import pytest

from services.artifacts import build_metadata, config_hash, read_csv, read_json, write_csv, write_json


class TestConfigHash:
    """Test suite for config_hash"""

    def test_key_order_irrelevant(self):
        """Test that the hash ignores key order"""
        assert config_hash({'a': 1, 'b': 2.5}) == config_hash({'b': 2.5, 'a': 1})

    def test_values_matter(self):
        """Test that changing a value changes the hash"""
        first = config_hash({'N': 16})
        assert len(first) == 12
        assert first != config_hash({'N': 18})

    def test_metadata(self):
        """Test the metadata fields and convention overrides"""
        metadata = build_metadata("orbit", {'L': 2}, log_base="natural", extra=1)
        assert metadata['package'] == "pxpscars"
        assert metadata['command'] == "orbit"
        assert metadata['config_hash'] == config_hash({'L': 2})
        assert metadata['conventions']['extra'] == 1
        assert 'angles' in metadata['conventions']


class TestWriters:
    """Test suite for write_csv and write_json"""

    def test_csv_header_and_precision(self, output_root):
        """Test the metadata line and 17-digit floats"""
        path = os.path.join(output_root, "nested", "series.csv")
        write_csv(path, ['t', 'value'], [[0.0, 1.0 / 3.0], [0.1, np.float64(2.0)]], {'command': "test"})
        with open(path) as handle:
            lines = handle.read().splitlines()
        assert lines[0] == '# {"command": "test"}'
        assert lines[1] == "t,value"
        assert lines[2] == "0,0.33333333333333331"
        metadata, header, rows = read_csv(path)
        assert metadata == {'command': "test"}
        assert header == ['t', 'value']
        assert float(rows[0][1]) == 1.0 / 3.0

    def test_csv_without_metadata(self, output_root):
        """Test a CSV with no comment line"""
        path = write_csv(os.path.join(output_root, "plain.csv"), ['a'], [[1]])
        metadata, header, rows = read_csv(path)
        assert metadata is None
        assert rows == [['1']]

    def test_json_is_deterministic(self, output_root):
        """Test that identical payloads give identical bytes"""
        payload = {'values': np.array([0.1, 0.2]), 'count': np.int64(3), 'pair': (1, 2)}
        first = write_json(os.path.join(output_root, "a.json"), payload, {'command': "test"})
        second = write_json(os.path.join(output_root, "b.json"), dict(reversed(list(payload.items()))),
                            {'command': "test"})
        with open(first, 'rb') as a, open(second, 'rb') as b:
            assert a.read() == b.read()
        document = read_json(first)
        assert document['values'] == [0.1, 0.2]
        assert document['metadata'] == {'command': "test"}

    def test_read_missing(self, output_root):
        """Test that reading an absent artifact names it"""
        with pytest.raises(FileNotFoundError, match="Artifact not found"):
            read_json(os.path.join(output_root, "absent.json"))

    def test_read_invalid(self, output_root):
        """Test that a malformed artifact is a ValueError"""
        path = os.path.join(output_root, "broken.json")
        with open(path, 'w') as handle:
            handle.write("{")
        with pytest.raises(ValueError, match="not valid JSON"):
            read_json(path)

    def test_unserializable(self, output_root):
        """Test that unknown objects are refused"""
        with pytest.raises(TypeError):
            write_json(os.path.join(output_root, "bad.json"), {'value': object()})
