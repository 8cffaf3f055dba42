"""Bundled cohort specs and the diagnosis-target registry."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .synth import CohortSpec

BUNDLED_SPECS = ("mimic_like", "ecgview_like")


def _specs_dir():
    return resources.files("ecgdx") / "specs"


def resolve_spec_path(name_or_path) -> Path:
    """A filesystem path if it exists, else a bundled spec by name (``.json`` optional)."""
    path = Path(name_or_path)
    if path.exists():
        return path
    stem = path.name[:-5] if path.name.endswith(".json") else path.name
    bundled = _specs_dir() / f"{stem}.json"
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no spec file {name_or_path!r} and no bundled spec named {stem!r}")


def load_spec(name_or_path) -> CohortSpec:
    return CohortSpec.from_json(resolve_spec_path(name_or_path))


@dataclass(frozen=True)
class RegistryEntry:
    code: str
    description: str
    system: str
    internal: dict
    external: dict


def load_targets() -> list[RegistryEntry]:
    data = json.loads((_specs_dir() / "targets.json").read_text(encoding="utf-8"))
    return [RegistryEntry(t["code"], t["description"], t["system"], t["internal"], t["external"])
            for t in data["targets"]]
