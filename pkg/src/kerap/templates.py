"""Versioned prompt text assets.

Templates live in ``prompts/<version>/<name>.txt`` and use ``$placeholder``
syntax. Changing any file changes request fingerprints, so a template edit
must come with a new version directory and re-recorded cassettes.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from string import Template

TEMPLATE_VERSION = "v1"


@lru_cache(maxsize=64)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> Template:
    path = resources.files("kerap").joinpath("prompts", version, f"{name}.txt")
    if not path.is_file():
        raise FileNotFoundError(f"prompt template not found: {version}/{name}.txt")
    return Template(path.read_text(encoding="utf-8").rstrip("\n"))


def render(name: str, version: str = TEMPLATE_VERSION, **values: object) -> str:
    """Substitute every placeholder; a missing value raises ``KeyError``."""
    return load_template(name, version).substitute({k: str(v) for k, v in values.items()})
