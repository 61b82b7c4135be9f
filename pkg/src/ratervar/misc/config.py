"""
Flat ``key = value`` configuration files bound to dataclasses.
"""

import dataclasses
import typing
from typing import Any, Dict, Optional, Type, TypeVar

from ratervar.exception.exception import ConfigError
from ratervar.misc.utils import format_key_values, parse_bool

T = TypeVar("T")


def _field_types(cls) -> Dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_field(value: str, fieldType, key: str, source: str):
    try:
        if fieldType is bool:
            return parse_bool(value)
        if fieldType is int:
            return int(value)
        if fieldType is float:
            return float(value)
        return str(value)
    except ValueError as err:
        raise ConfigError(f"{source}: cannot parse {key} = {value!r}: {err}") from err


def config_from_text(cls: Type[T], text: str, source: str = "<string>", aliases=None) -> Dict[str, Any]:
    """
    Parse config text into a dict of typed values for the fields of ``cls``.

    Parameters
    ----------
        cls : dataclass type
        text : str
            Config file contents.
        source : str, default="<string>"
            Name used in error messages.
        aliases : Dict[str, str], optional
            Accepted alternative spellings of field names.

    Returns
    -------
        values : Dict[str, Any]
            Only the keys that appeared in the text.

    Raises
    ------
        ConfigError
            On unknown keys (reported with their line number), duplicate
            keys, lines without '=' or unparsable values.
    """
    aliases = aliases or dict()
    types = _field_types(cls)
    values = dict()
    seen = set()
    for lineNo, rawLine in enumerate(text.splitlines(), start=1):
        line = rawLine.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineNo}: expected 'key = value', got {rawLine!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = aliases.get(key, key)
        if key not in types:
            raise ConfigError(f"{source}:{lineNo}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineNo}: duplicate config key {key!r}")
        seen.add(key)
        values[key] = parse_field(value, types[key], key, f"{source}:{lineNo}")
    return values


def config_to_text(config) -> str:
    return format_key_values(dataclasses.asdict(config))


def merge_config(config: T, overrides: Optional[Dict[str, Any]]) -> T:
    """Replace fields from ``overrides``; None values are skipped."""
    if not overrides:
        return config
    known = {f.name for f in dataclasses.fields(config)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    updates = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(config, **updates)
