"""TOML configuration for backend commands and rule catalogs.

Recognized keys::

    [tex]
    engine = "auto"            # auto | pdflatex | texlive.js
    engine_cmd = "pdflatex"
    bibtex_cmd = "bibtex"
    texlive_js = "/path/to/node_modules/texlive"

    [metadata]
    backend_cmd = "exiftool-shim"

    [verify]
    raster_cmd = "my-rasterizer"
    dpi = 150

    [scan]
    rules = "rules.toml"
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ._toml import TOMLDecodeError, loads
from .errors import ConfigError

ENV_CONFIG = "TEXSCRUB_CONFIG"


@dataclass
class Config:
    engine: str = "auto"
    engine_cmd: str | None = None
    bibtex_cmd: str | None = None
    texlive_js: str | None = None
    metadata_backend_cmd: str | None = None
    raster_cmd: str | None = None
    dpi: int | None = None
    rules: str | None = None


_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "tex": {"engine": ("engine", str), "engine_cmd": ("engine_cmd", str), "bibtex_cmd": ("bibtex_cmd", str),
            "texlive_js": ("texlive_js", str)},
    "metadata": {"backend_cmd": ("metadata_backend_cmd", str)},
    "verify": {"raster_cmd": ("raster_cmd", str), "dpi": ("dpi", int)},
    "scan": {"rules": ("rules", str)},
}


def load_config(path: str | Path | None = None) -> Config:
    """Read ``path`` (or ``$TEXSCRUB_CONFIG``); a missing default is an empty config."""
    explicit = path is not None
    path = path or os.environ.get(ENV_CONFIG)
    cfg = Config()
    if not path:
        return cfg
    p = Path(path)
    if not p.exists():
        if explicit:
            raise ConfigError(f"config file {p} not found")
        return cfg
    try:
        data = loads(p.read_text("utf-8"))
    except (TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    for section, table in data.items():
        if section not in _SCHEMA or not isinstance(table, dict):
            raise ConfigError(f"{p}: unknown section [{section}]")
        for key, value in table.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{p}: unknown key {section}.{key}")
            attr, typ = _SCHEMA[section][key]
            if not isinstance(value, typ) or isinstance(value, bool):
                raise ConfigError(f"{p}: {section}.{key} must be {typ.__name__}")
            setattr(cfg, attr, value)
    if cfg.rules and not Path(cfg.rules).is_absolute():
        cfg.rules = str((p.parent / cfg.rules).resolve())
    return cfg
