"""Published JSON schemas for CLI outputs and on-disk records."""

import json
from importlib import resources


def load_schema(name: str) -> dict:
    """Schema ``<name>.schema.json`` shipped with the package (e.g. ``"refine"``, ``"record"``)."""
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text(encoding="utf-8"))


def schema_names() -> list[str]:
    return sorted(p.name[: -len(".schema.json")] for p in resources.files(__name__).iterdir() if p.name.endswith(".schema.json"))
