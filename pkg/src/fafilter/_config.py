"""Line-oriented ``key = value`` documents with ``[section]`` headers.

Shared by the knowledge documents, the pipeline configuration and the
simulator profiles. Grammar::

    document   := line*
    line       := blank | comment | header | assignment
    comment    := '#' <anything>
    header     := '[' name ']'
    assignment := key '=' value

Trailing ``#`` comments are stripped. Every assignment must follow a header,
keys are unique within a section, and sections may not repeat.
"""

from __future__ import annotations

import math
import re

_HEADER = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_INTERVAL = re.compile(rf"^({_NUMBER})\s*\.\.\s*({_NUMBER})$")
_POINT = rf"\(\s*({_NUMBER})\s*,\s*({_NUMBER})\s*\)"
_REGION = re.compile(rf"^{_POINT}\s*\.\.\s*{_POINT}$")


class ConfigError(ValueError):
    """Malformed or semantically invalid configuration document.

    ``line`` is the 1-based line number when the problem can be located.
    """

    def __init__(self, message, line=None):
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Entry:
    __slots__ = ("value", "line")

    def __init__(self, value, line):
        self.value = value
        self.line = line

    def __repr__(self):
        return f"Entry({self.value!r}, line={self.line})"


def parse_sections(text, schema):
    """Split ``text`` into ``{section: {key: Entry}}``.

    ``schema`` maps each allowed section to its allowed keys, or to ``None``
    to accept any well-formed key.
    """
    sections = {}
    current = None
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            name = m.group(1)
            if name not in schema:
                raise ConfigError(f"unknown section [{name}]", lineno)
            if name in sections:
                raise ConfigError(f"duplicate section [{name}]", lineno)
            section = name
            current = sections[name] = {}
            continue
        if line.startswith("["):
            raise ConfigError(f"malformed section header {line!r}", lineno)
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", lineno)
        if current is None:
            raise ConfigError(f"key {key!r} outside of any section", lineno)
        allowed = schema[section]
        if allowed is not None and key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in current:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        current[key] = Entry(value, lineno)
    return sections


def as_float(entry, lo=-math.inf, hi=math.inf):
    try:
        value = float(entry.value)
    except ValueError:
        raise ConfigError(f"expected a number, got {entry.value!r}", entry.line) from None
    if not math.isfinite(value):
        raise ConfigError(f"non-finite number {entry.value!r}", entry.line)
    if not lo <= value <= hi:
        raise ConfigError(f"{value!r} outside [{lo}, {hi}]", entry.line)
    return value


def as_int(entry, lo=-math.inf, hi=math.inf):
    try:
        value = int(entry.value)
    except ValueError:
        raise ConfigError(f"expected an integer, got {entry.value!r}", entry.line) from None
    if not lo <= value <= hi:
        raise ConfigError(f"{value} outside [{lo}, {hi}]", entry.line)
    return value


def as_bool(entry):
    v = entry.value.lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected true/false, got {entry.value!r}", entry.line)


def as_list(entry):
    items = [item.strip() for item in entry.value.split(",")]
    if any(not item for item in items):
        raise ConfigError(f"empty item in list {entry.value!r}", entry.line)
    return items


def as_interval(entry):
    m = _INTERVAL.match(entry.value)
    if not m:
        raise ConfigError(f"expected 'lo..hi', got {entry.value!r}", entry.line)
    lo, hi = float(m.group(1)), float(m.group(2))
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ConfigError("non-finite interval bound", entry.line)
    if lo > hi:
        raise ConfigError(f"interval lower bound {lo!r} exceeds upper bound {hi!r}", entry.line)
    return lo, hi


def as_region(entry):
    m = _REGION.match(entry.value)
    if not m:
        raise ConfigError(f"expected '(x0,y0)..(x1,y1)', got {entry.value!r}", entry.line)
    x0, y0, x1, y1 = (float(g) for g in m.groups())
    if x0 > x1 or y0 > y1:
        raise ConfigError("region corners out of order", entry.line)
    if min(x0, y0) < 0.0 or max(x1, y1) > 1.0:
        raise ConfigError("region must lie inside [0,1]^2", entry.line)
    return x0, y0, x1, y1


def as_pair(entry):
    items = as_list(entry)
    if len(items) != 2:
        raise ConfigError(f"expected two comma-separated numbers, got {entry.value!r}", entry.line)
    try:
        return float(items[0]), float(items[1])
    except ValueError:
        raise ConfigError(f"expected numbers, got {entry.value!r}", entry.line) from None


def fmt(x):
    """Shortest text that parses back to exactly ``x``."""
    return repr(float(x))
