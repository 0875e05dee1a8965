"""Flat key-value experiment configuration files.

Format: one `block.key = value` per line, `#` comments, blank lines ignored.
Values parse as bool/int/float when they look like one, else stay strings.
Lists use commas (`sweep.lambda = 1,2,5,10`).
"""

from __future__ import annotations

from .errors import ConfigurationError


def _parse_scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(t)
    except ValueError:
        pass
    try:
        return float(t)
    except ValueError:
        return t


def parse_value(text: str):
    t = text.strip()
    if "," in t:
        return [_parse_scalar(p) for p in t.split(",") if p.strip()]
    return _parse_scalar(t)


def parse_config(path) -> dict:
    """Read a config file into a flat {dotted.key: value} mapping."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = parse_value(value)
    return out


def write_config(path, values: dict):
    with open(path, "w") as fh:
        for key in sorted(values):
            v = values[key]
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            fh.write(f"{key} = {v}\n")


def config_get(cfg: dict, key: str, default=None):
    return cfg.get(key, default)
