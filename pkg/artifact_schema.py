#!/usr/bin/env python3
"""
Schema validation for the JSON artifacts of the pipeline.

Validates pattern sidecars, templates, models and benchmark reports against
comotion_schema.json (JSON Schema draft 7).
"""

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Union

from jsonschema import Draft7Validator

from comotion_errors import MissingInputError, SchemaError

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "comotion_schema.json"


@lru_cache(maxsize=1)
def load_schema() -> Dict[str, Any]:
    """Load the artifact schema from file."""
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        schema = json.load(f)
    Draft7Validator.check_schema(schema)
    return schema


def validate_artifact(kind: str, document: Dict[str, Any]) -> None:
    """Raise SchemaError when ``document`` does not match definition ``kind``."""
    schema = load_schema()
    if kind not in schema["definitions"]:
        raise SchemaError(f"Unknown artifact kind: {kind}")
    validator = Draft7Validator({"$ref": f"#/definitions/{kind}", "definitions": schema["definitions"]})
    error = next(iter(sorted(validator.iter_errors(document), key=lambda e: list(e.path))), None)
    if error is not None:
        where = " -> ".join(str(p) for p in error.path) or "<root>"
        raise SchemaError(f"Invalid {kind}: {error.message} (at {where})")


def write_artifact(kind: str, document: Dict[str, Any], path: Union[str, Path]) -> None:
    validate_artifact(kind, document)
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.debug(f"Wrote {kind} to {path}")


def read_artifact(kind: str, path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"{kind} file not found: {path}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path.name}: invalid JSON ({e})") from e
    validate_artifact(kind, document)
    return document
