"""Prompt template assets.

Templates are plain text with ``{placeholder}`` fields.  Only placeholders
passed to :meth:`Templates.render` are substituted, so literal braces in code
and JSON examples survive untouched.  A user directory can shadow any asset
by providing a file with the same relative name.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from ..errors import ConfigurationError

_FIELD = re.compile(r"\{([a-z_]+)\}")


class Templates:
    def __init__(self, override_dir=None):
        self.override_dir = Path(override_dir) if override_dir else None
        self._cache: dict[str, str] = {}

    def load(self, name: str) -> str:
        if name in self._cache:
            return self._cache[name]
        text = None
        if self.override_dir is not None:
            path = self.override_dir / name
            if path.is_file():
                text = path.read_text(encoding="utf-8")
        if text is None:
            res = resources.files(__package__).joinpath(name)
            if not res.is_file():
                raise ConfigurationError(f"missing template asset {name!r}")
            text = res.read_text(encoding="utf-8")
        self._cache[name] = text
        return text

    def render(self, name: str, **values) -> str:
        text = self.load(name)
        return _FIELD.sub(lambda m: str(values[m.group(1)]) if m.group(1) in values else m.group(0), text)
