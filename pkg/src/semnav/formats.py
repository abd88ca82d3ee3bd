"""Versioned JSON document handling shared by every on-disk format.

Each format owns a JSON Schema under semnav/data/schemas/. Documents carry a
`version` field checked before schema validation; unknown fields are rejected
by the schemas themselves (additionalProperties: false throughout).
"""

import json
from functools import lru_cache
from importlib import resources

import jsonschema


class MalformedDocument(ValueError):
    """Document violates its schema or is not valid JSON."""


class SchemaVersionMismatch(MalformedDocument):
    """Document's version field is missing or unsupported."""


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    ref = resources.files("semnav").joinpath("data", "schemas", f"{name}.schema.json")
    with ref.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def validate_document(doc, schema_name: str, expected_version: int = 1) -> dict:
    """Check version, then full schema. Returns the document unchanged."""
    if not isinstance(doc, dict):
        raise MalformedDocument(f"{schema_name}: top level must be an object")
    version = doc.get("version")
    if version != expected_version:
        raise SchemaVersionMismatch(
            f"{schema_name}: version {version!r} unsupported (expected {expected_version})"
        )
    try:
        jsonschema.validate(doc, load_schema(schema_name))
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path)
        raise MalformedDocument(f"{schema_name}: {e.message} (at /{path})") from e
    return doc


def read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise MalformedDocument(f"{path}: invalid JSON ({e})") from e


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
