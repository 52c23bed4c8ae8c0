"""Flat key-value experiment configs.

Files hold `section.key = value` lines (full-line # comments allowed),
chosen over nested formats so experiment records diff cleanly.  Command
line flags override file values; the seed falls back to the PCNN_SEED
environment variable when neither is given.
"""

import os
from dataclasses import dataclass, field
from typing import Dict, Optional

from poseact.errors import FormatError, ValidationError

SEED_ENV_VAR = "PCNN_SEED"


@dataclass
class Config:
    values: Dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int = None) -> Optional[int]:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ValidationError(f"config key {key} is not an integer: {raw!r}") from None

    def get_float(self, key: str, default: float = None) -> Optional[float]:
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ValidationError(f"config key {key} is not a number: {raw!r}") from None

    def get_bool(self, key: str, default: bool = None) -> Optional[bool]:
        raw = self.values.get(key)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"config key {key} is not a boolean: {raw!r}")

    def set(self, key: str, value) -> None:
        self.values[key] = str(value)


def read_config(fh) -> Config:
    if isinstance(fh, str):
        with open(fh) as inp:
            return read_config(inp)
    values: Dict[str, str] = {}
    for lineno, line in enumerate(fh, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"config line {lineno}: expected `key = value`")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise FormatError(f"config line {lineno}: empty key")
        values[key] = value
    return Config(values)


def write_config(fh, config: Config) -> None:
    if isinstance(fh, str):
        with open(fh, "w") as out:
            write_config(out, config)
        return
    for key in sorted(config.values):
        fh.write(f"{key} = {config.values[key]}\n")


def resolve_seed(flag_value: Optional[int], config: Config) -> int:
    """Flag beats config key `seed` beats PCNN_SEED beats 0."""
    if flag_value is not None:
        return flag_value
    from_config = config.get_int("seed")
    if from_config is not None:
        return from_config
    from_env = os.environ.get(SEED_ENV_VAR)
    if from_env is not None:
        try:
            return int(from_env)
        except ValueError:
            raise ValidationError(
                f"{SEED_ENV_VAR} is not an integer: {from_env!r}"
            ) from None
    return 0
