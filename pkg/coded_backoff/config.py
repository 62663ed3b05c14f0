"""
Defaults and config-file loading.
Precedence: command-line flags > config file > CODED_BACKOFF_SEED (seed only) > defaults.
"""
import os
from pathlib import Path
from typing import Optional

from coded_backoff.errors import ConfigError

DEFAULT_KAPPA = 64
MIN_KAPPA = 6
DEFAULT_SEED = 0
DEFAULT_PAYLOAD_LEN = 32
SEED_ENV_VAR = "CODED_BACKOFF_SEED"
SEED_LIMIT = 2 ** 128

# Snapshot sampling stride: every slot up to this horizon, then every LONG_RUN_STRIDE slots
FULL_STRIDE_MAX_HORIZON = 1_000_000
LONG_RUN_STRIDE = 16

# Keys a config file may set (flag names with underscores)
CONFIG_KEYS = {
    "kappa": int,
    "horizon": int,
    "seed": int,
    "schedule": str,
    "n": int,
    "w": int,
    "rate": float,
    "trace": str,
    "out": str,
    "format": str,
    "strict_lemmas": "bool",
    "verify_coding": "bool",
    "jobs": int,
    "stride": int,
    "lookback": int,
    "payload_len": int,
    "protocol": str,
    "fixed_p": float,
    "continuous_backlog": "bool",
    "sparse": "bool",
    "trials": int,
}

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def default_stride(horizon: int) -> int:
    """Snapshot stride used when none is given."""
    return 1 if horizon <= FULL_STRIDE_MAX_HORIZON else LONG_RUN_STRIDE


def default_lookback(kappa: int) -> int:
    """Decoder lookback used when none is given."""
    return 2 * kappa


def _coerce(key: str, raw: str, path: str, line_number: int):
    kind = CONFIG_KEYS[key]
    if kind == "bool":
        word = raw.lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        raise ConfigError(f"{path}:{line_number}: '{key}' expects a boolean, got '{raw}'")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"{path}:{line_number}: '{key}' expects {kind.__name__}, got '{raw}'"
        ) from None


def load_config_file(path: str) -> dict:
    """
    Read a `key = value` config file.
    Blank lines and lines starting with '#' are skipped; keys may use dashes or underscores.
    """
    file_path = Path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None

    values: dict = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_number}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{line_number}: unknown key '{key}'")
        values[key] = _coerce(key, raw, path, line_number)
    return values


def seed_from_env() -> Optional[int]:
    """Seed fallback from the environment, or None when unset."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return None
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'") from None
    if not seed_in_range(seed):
        raise ConfigError(f"{SEED_ENV_VAR} must be in [0, 2**128), got {seed}")
    return seed


def seed_in_range(seed: int) -> bool:
    return 0 <= seed < SEED_LIMIT
