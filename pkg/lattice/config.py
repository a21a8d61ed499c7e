# lattice/config.py
# Thiqa Toolkit Configuration

import logging
import os
import sys
from pathlib import Path
from dotenv import load_dotenv

from lattice.errors import ConfigError

# Load environment overrides from .env
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(env_path)


def _env_float(name: str, default: float) -> float:
    """Read a float setting from THIQA_<name>, falling back to default."""
    value = os.getenv(f"THIQA_{name}")
    if value is None or value == "":
        return default
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"THIQA_{name} must be a number, got {value!r}")


def _env_int(name: str, default: int) -> int:
    value = os.getenv(f"THIQA_{name}")
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"THIQA_{name} must be an integer, got {value!r}")


# --- TOOL ---
TOOL_NAME = "thiqa"
TOOL_VERSION = "1.0.0"
BASE_DIR = Path(__file__).parent.parent

# --- LATTICE ---
FRAME_MS = _env_int("FRAME_MS", 10)
SILENCE_WORD = "<sil>"

# --- POSTERIORS / HWCN ---
ACOUSTIC_SCALE = _env_float("ACOUSTIC_SCALE", 1.0 / 12.0)
TOLERANCE_FRAMES = _env_int("TOLERANCE_FRAMES", 10)  # 100ms at 10ms frames
SEGMENTATION_CAP = _env_int("SEGMENTATION_CAP", 10000)

# --- CONFIDENCE MODEL ---
EMBEDDING_DIM = 25
SCALAR_FEATURES = 7
FEATURE_DIM = EMBEDDING_DIM + SCALAR_FEATURES
STATE_DIM = _env_int("STATE_DIM", 16)
HIDDEN_DIM = _env_int("HIDDEN_DIM", 8)
CONFIDENCE_CLAMP = 1e-9
DEFAULT_SEED = _env_int("SEED", 0)

# --- TRAINING ---
LEARNING_RATE = _env_float("LEARNING_RATE", 0.5)
EPOCHS = _env_int("EPOCHS", 30)
BATCH_SIZE = _env_int("BATCH_SIZE", 64)
L2 = _env_float("L2", 1e-4)

# Scaled-down stand-in for the 80-200 state / 20-40 hidden range
MODEL_GRID = [
    {"kind": "lattice_rnn", "state_dim": 8, "hidden_dim": 4},
    {"kind": "lattice_rnn", "state_dim": 8, "hidden_dim": 8},
    {"kind": "lattice_rnn", "state_dim": 16, "hidden_dim": 4},
    {"kind": "lattice_rnn", "state_dim": 16, "hidden_dim": 8},
]

# --- CALIBRATION ---
SMOOTHING_SCALE = _env_float("SMOOTHING_SCALE", 1.8)
CALIBRATION_GRID_POINTS = _env_int("CALIBRATION_GRID_POINTS", 4096)
CALIBRATION_MODES = ["exact", "grid"]

# --- METRICS ---
DET_POINTS = _env_int("DET_POINTS", 101)
ECE_BINS = 10
EER_SCOPES = ["all", "competing"]

# --- FILE FORMAT TAGS ---
LATTICE_FORMAT = "thiqa-lattice/1"
HWCN_FORMAT = "thiqa-hwcn/1"
MODEL_FORMAT = "THIQA-MODEL 1"
CALIBRATOR_FORMAT = "THIQA-CALIBRATOR 1"
DECODE_FORMAT = "thiqa-decode/1"
SCORES_FORMAT = "thiqa-scores/1"
SIMCONFIG_FORMAT = "thiqa-simconfig/1"

FORMAT_VERSIONS = {
    "lattice": LATTICE_FORMAT,
    "hwcn": HWCN_FORMAT,
    "model": MODEL_FORMAT,
    "calibrator": CALIBRATOR_FORMAT,
    "decode": DECODE_FORMAT,
    "scores": SCORES_FORMAT,
    "simconfig": SIMCONFIG_FORMAT,
}

# --- LOGGING ---
LOG_LEVEL = os.getenv("THIQA_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s [%(filename)s:%(lineno)s - %(funcName)s - %(levelname)s ] %(message)s"


def setup_logging(level: str = None) -> logging.Logger:
    """Configure the root toolkit logger on stderr. Safe to call repeatedly."""
    root = logging.getLogger()
    root.setLevel((level or LOG_LEVEL).upper())
    if not any(getattr(h, "_thiqa", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._thiqa = True
        root.addHandler(handler)
    return root


def current_defaults() -> dict:
    """All tunable defaults, as printed into run manifests."""
    return {
        "frame_ms": FRAME_MS,
        "acoustic_scale": ACOUSTIC_SCALE,
        "tolerance_frames": TOLERANCE_FRAMES,
        "segmentation_cap": SEGMENTATION_CAP,
        "state_dim": STATE_DIM,
        "hidden_dim": HIDDEN_DIM,
        "learning_rate": LEARNING_RATE,
        "epochs": EPOCHS,
        "batch_size": BATCH_SIZE,
        "l2": L2,
        "smoothing_scale": SMOOTHING_SCALE,
        "calibration_grid_points": CALIBRATION_GRID_POINTS,
        "det_points": DET_POINTS,
        "seed": DEFAULT_SEED,
    }
