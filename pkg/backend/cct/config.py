"""
Toolkit configuration
Defaults can be overridden by a cct.env file (KEY=VALUE lines). Only files are read,
process environment variables are ignored.
"""

import logging
import logging.config
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import dotenv_values

PACKAGE_DIR = Path(__file__).resolve().parent
BACKEND_DIR = PACKAGE_DIR.parent
DATA_DIR = PACKAGE_DIR / "data"

CONFIG_FILE = Path("cct.env")
LOGGING_INI = BACKEND_DIR / "logging.ini"


def read_config_file(path: Optional[Path] = None) -> Dict[str, Optional[str]]:
    """Read KEY=VALUE overrides. A missing file yields an empty mapping."""
    path = Path(path or CONFIG_FILE)
    if not path.is_file():
        return {}
    return dict(dotenv_values(path))


_overrides = read_config_file()

# Shipped data files
DEFAULT_SETTINGS_FILE = Path(_overrides.get("CCT_SETTINGS_FILE") or DATA_DIR / "default_settings.cfg")
DEFAULT_WARDEN_FILE = Path(_overrides.get("CCT_WARDEN_FILE") or DATA_DIR / "default_warden.rules")

# Two-level LSB: half-width of the uniform offset around each base value
LSB_RADIUS = int(_overrides.get("CCT_LSB_RADIUS") or "25")

# Hopping PRF used when a config does not name one
DEFAULT_PRF = _overrides.get("CCT_DEFAULT_PRF") or "hmac-sha256"

# Compressibility detector backend, pinned so scores stay reproducible
COMPRESSOR = _overrides.get("CCT_COMPRESSOR") or "zlib"
COMPRESSION_LEVEL = int(_overrides.get("CCT_COMPRESSION_LEVEL") or "9")

# Minimum sample count for the compressibility detector
MIN_COMPRESSIBILITY_SAMPLES = int(_overrides.get("CCT_MIN_COMPRESSIBILITY_SAMPLES") or "32")

# Calibration defaults
CALIBRATION_BINS = int(_overrides.get("CCT_CALIBRATION_BINS") or "16")
CALIBRATION_EPSILON = float(_overrides.get("CCT_CALIBRATION_EPSILON") or "0.02")
CALIBRATION_ROUNDING_US = int(_overrides.get("CCT_CALIBRATION_ROUNDING_US") or "100")
CALIBRATION_WINDOW = int(_overrides.get("CCT_CALIBRATION_WINDOW") or "100")

LOG_LEVEL = _overrides.get("CCT_LOG_LEVEL") or "WARNING"

# Carrier traffic presets for experiment files
# key -> description, iat model
CARRIER_PRESETS: Dict[str, Dict[str, Any]] = {
    "lan_constant": {
        "description": "Fixed 1 ms spacing, e.g. a polling sensor",
        "iat_model": "constant:1000",
    },
    "web_exponential": {
        "description": "Poisson-like request arrivals with a 5 ms mean",
        "iat_model": "exponential:5000",
    },
    "bulk_exponential": {
        "description": "Dense transfer with a 500 us mean",
        "iat_model": "exponential:500",
    },
}

# Channel noise presets
# key -> ChannelConfig fields
CHANNEL_PRESETS: Dict[str, Dict[str, Any]] = {
    "noiseless": {"loss_prob": 0.0, "reorder_prob": 0.0, "jitter": 0, "bit_flip_prob": 0.0},
    "lan": {"loss_prob": 0.001, "reorder_prob": 0.0, "jitter": 50, "bit_flip_prob": 0.0},
    "wan": {"loss_prob": 0.01, "reorder_prob": 0.01, "jitter": 400, "bit_flip_prob": 0.0},
    "hostile": {"loss_prob": 0.05, "reorder_prob": 0.05, "jitter": 1500, "bit_flip_prob": 1e-4},
}


def setup_logging(level: Optional[str] = None) -> None:
    """Configure logging from backend/logging.ini, falling back to a basic stderr handler."""
    if LOGGING_INI.is_file():
        logging.config.fileConfig(LOGGING_INI, disable_existing_loggers=False)
    else:
        logging.basicConfig(format="%(levelname)-5.5s [%(name)s] %(message)s")
    logging.getLogger("cct").setLevel((level or LOG_LEVEL).upper())
