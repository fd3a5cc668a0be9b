"""Plain-text experiment configuration: ``key = value`` lines grouped under
``[section]`` headers.  Unknown sections or keys are errors."""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ConfigError

__all__ = ["parse_config", "KNOWN_KEYS"]

_SECTION_RE = re.compile(r"^\[([a-z]+)\]$")
_LAYER_KEY_RE = re.compile(r"^layer\d+$")

KNOWN_KEYS = {
    "data": {
        "kind", "num", "test_num", "dims", "clusters", "separation",
        "noise_std", "seed", "path", "test_path", "cov_diag", "classes",
    },
    "model": {"init_seed"},  # plus layer1, layer2, ...
    "train": {
        "epochs", "batch_size", "hebb_lr", "probe_lr", "momentum",
        "nesterov", "weight_decay", "early_stopping", "seed", "schedule",
    },
}


def parse_config(text: str) -> dict[str, dict[str, str]]:
    """Parse config text into {section: {key: value}}; validates keys."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _SECTION_RE.match(line)
        if match:
            name = match.group(1)
            if name not in KNOWN_KEYS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            current = sections.setdefault(name, {})
            continue
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        section_name = next(n for n, s in sections.items() if s is current)
        allowed = KNOWN_KEYS[section_name]
        if key not in allowed and not (
            section_name == "model" and _LAYER_KEY_RE.match(key)
        ):
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section_name}]")
        current[key] = value
    return sections


def load_config(path) -> tuple[str, dict[str, dict[str, str]]]:
    text = Path(path).read_text()
    return text, parse_config(text)
