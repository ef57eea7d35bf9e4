"""
Command-line front end for the PXP scars pipeline.
"""

import json
import os
from typing import Dict, Optional

from dotenv import load_dotenv

from app.config import CONFIG_MODELS, RunConfig
from services.exceptions import ValidationFailure


def create_config(command: str, file: Optional[str] = None, overrides: Optional[Dict] = None) -> RunConfig:
    """
    Build and validate the configuration of one command.

    Values are layered as built-in defaults, environment defaults, the JSON file and finally
    the overrides (CLI flags); None overrides are ignored.

    Args:
        command (str): One of orbit, lyapunov, wigner, twa, quantum, report
        file (Optional[str]): JSON configuration file
        overrides (Optional[Dict]): Values that take precedence over the file

    Returns:
        RunConfig: The validated command model

    Raises:
        ValidationFailure: If the command is unknown or the file cannot be read
        pydantic.ValidationError: If a value violates the model
    """
    if command not in CONFIG_MODELS:
        raise ValidationFailure(f"Unknown command: {command}")
    load_dotenv()

    values: Dict = {}
    output_root = os.getenv("PXPSCARS_OUTPUT_DIR")
    if output_root:
        values['output_root'] = output_root
    if command == "quantum" and os.getenv("PXPSCARS_MAX_BASIS_DIM"):
        values['max_basis_dim'] = int(os.getenv("PXPSCARS_MAX_BASIS_DIM"))

    if file is not None:
        try:
            with open(file, 'r') as config_file:
                loaded = json.load(config_file)
        except FileNotFoundError as error:
            raise ValidationFailure(f"Configuration file not found: {error}") from error
        except json.JSONDecodeError as error:
            raise ValidationFailure(f"Configuration file {file} is not valid JSON: {error}") from error
        if not isinstance(loaded, dict):
            raise ValidationFailure(f"Configuration file {file} must hold a JSON object")
        values.update(loaded)

    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return CONFIG_MODELS[command].model_validate(values)
