"""Flat key-value experiment config files.

Grammar: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored.  Keys are dotted section paths (``train.lr``); values
are scalars or comma-separated lists.  Unknown keys are rejected by name
so a typo cannot silently fall back to a default.

    # fig2b-style run
    task = mnist
    data.dir = ./data
    arch.hidden = 512,512
    neuron.t = 1.0
    train.epochs = 10
    sweep.t = 0.2, 1, 4
    out = results/fig2b
"""

from __future__ import annotations

__all__ = ["ConfigError", "parse_config_text", "load_config"]


class ConfigError(ValueError):
    """Invalid config content; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def parse_config_text(text: str) -> dict[str, str]:
    """Parse config text into an ordered key -> raw-value mapping."""
    result: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(raw.strip(), f"line {lineno}: empty key")
        if key in result:
            raise ConfigError(key, f"line {lineno}: duplicate key")
        result[key] = value
    return result


def load_config(path) -> dict[str, str]:
    with open(path) as f:
        return parse_config_text(f.read())
