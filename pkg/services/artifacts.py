"""
Deterministic CSV and JSON artifact writers.

Every CSV starts with a `# ` comment line holding the run metadata as JSON; every JSON
artifact carries the same object under "metadata". Floats are written with 17
significant digits so reruns of the same configuration are byte-identical.
"""

import csv
import hashlib
import json
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from services import __version__, get_logger

logger = get_logger(__name__)

PACKAGE_NAME = "pxpscars"

CONVENTIONS = {
    'angles': "flow theta in [0, pi/2] full-angle MPS amplitudes; Wigner theta = 2 * flow theta",
    'boundary_terms': "open chains use single-sided projectors on the end sites",
    'log_base': "natural",
    'h_ks_units': "1/time in units of 1/Omega, per unit cell",
    'weyl_symbol': "leading order in the Moyal expansion",
}


def config_hash(config: Dict) -> str:
    """
    First 12 hex digits of the sha256 of a canonical JSON rendering.

    Args:
        config (Dict): Plain JSON-compatible configuration

    Returns:
        str: Short hash identifying the configuration
    """
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def build_metadata(command: str, config: Dict, **conventions: Any) -> Dict:
    merged = dict(CONVENTIONS)
    merged.update(conventions)
    return {
        'package': PACKAGE_NAME,
        'version': __version__,
        'command': command,
        'config_hash': config_hash(config),
        'conventions': merged,
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _format(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]],
              metadata: Optional[Dict] = None) -> str:
    """
    Write rows as CSV with an optional metadata comment line.

    Args:
        path (str): Output file path; parent directories are created
        header (Sequence[str]): Column names
        rows (Iterable[Sequence[Any]]): Row values
        metadata (Optional[Dict]): Metadata written as `# {json}`

    Returns:
        str: The path written

    Raises:
        IOError: If the file cannot be written
    """
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, 'w', newline='') as output_file:
            if metadata is not None:
                output_file.write("# " + json.dumps(metadata, sort_keys=True, default=_jsonable) + "\n")
            writer = csv.writer(output_file, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_format(value) for value in row])
    except IOError as error:
        raise IOError(f"Failed to write CSV file {path}: {error}")
    logger.info(f"Wrote {path}")
    return path


def write_json(path: str, payload: Dict, metadata: Optional[Dict] = None) -> str:
    """
    Write a JSON document with sorted keys and 2-space indentation.

    Args:
        path (str): Output file path
        payload (Dict): Document body
        metadata (Optional[Dict]): Stored under the "metadata" key

    Returns:
        str: The path written
    """
    document = dict(payload)
    if metadata is not None:
        document['metadata'] = metadata
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, 'w') as output_file:
            json.dump(document, output_file, sort_keys=True, indent=2, default=_jsonable)
            output_file.write("\n")
    except IOError as error:
        raise IOError(f"Failed to write JSON file {path}: {error}")
    logger.info(f"Wrote {path}")
    return path


def read_json(path: str) -> Dict:
    try:
        with open(path, 'r') as input_file:
            return json.load(input_file)
    except FileNotFoundError as error:
        raise FileNotFoundError(f"Artifact not found: {error}")
    except json.JSONDecodeError as error:
        raise ValueError(f"Artifact {path} is not valid JSON: {error}")


def read_csv(path: str) -> Tuple[Optional[Dict], List[str], List[List[str]]]:
    """
    Read a CSV written by write_csv.

    Returns:
        Tuple[Optional[Dict], List[str], List[List[str]]]: (metadata, header, rows as strings)
    """
    try:
        with open(path, 'r', newline='') as input_file:
            lines = input_file.read().splitlines()
    except FileNotFoundError as error:
        raise FileNotFoundError(f"Artifact not found: {error}")

    metadata = None
    if lines and lines[0].startswith("# "):
        metadata = json.loads(lines[0][2:])
        lines = lines[1:]
    reader = list(csv.reader(lines))
    if not reader:
        return metadata, [], []
    return metadata, reader[0], reader[1:]
