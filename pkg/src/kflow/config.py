"""Line-oriented key=value run configuration.

Grammar: one ``key = value`` pair per line; blank lines and ``#`` comments
ignored; keys use the long CLI flag names with ``-`` or ``_``. Values are
kept as strings and coerced by argparse, so flags always override the file.
"""

from __future__ import annotations


class ConfigError(ValueError):
    pass


def parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
        key, value = text.split("=", 1)
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out
