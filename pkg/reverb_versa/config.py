import os
from dotenv import load_dotenv

load_dotenv() # Load variables from .env file

# --- Defaults ---
DEFAULT_THREADS=1
DEFAULT_C=343.0 # 20 degC air
DEFAULT_FS=16000
DEFAULT_DURATION=0.3
DEFAULT_OUT="runs"

# Field working point (desk-scale stand-in)
FIELD_SAMPLE_RATE=8000
FIELD_IR_SAMPLES=2000
FIELD_QUADRATURE_SIZE=64

# SH order used for gain patterns and pattern extraction
PATTERN_SH_ORDER=4
PATTERN_FLOOR=1e-4

# Interior edges of the six octave bands centred on 125 Hz .. 4 kHz
OCTAVE_BAND_EDGES=(176.8, 353.6, 707.1, 1414.2, 2828.4)

# --- Loaded Config ---
OUTPUT_DIR = os.getenv("REVERB_VERSA_OUT_DIR", DEFAULT_OUT)

try:
    THREADS = max(1, int(os.getenv("REVERB_VERSA_THREADS", str(DEFAULT_THREADS))))
except (ValueError, TypeError):
     THREADS = DEFAULT_THREADS

try:
     SPEED_OF_SOUND = float(os.getenv("REVERB_VERSA_SPEED_OF_SOUND", str(DEFAULT_C)))
except (ValueError, TypeError):
     SPEED_OF_SOUND = DEFAULT_C

try:
     SAMPLE_RATE = int(os.getenv("REVERB_VERSA_SAMPLE_RATE", str(DEFAULT_FS)))
except (ValueError, TypeError):
     SAMPLE_RATE = DEFAULT_FS

try:
     IR_DURATION = float(os.getenv("REVERB_VERSA_IR_DURATION", str(DEFAULT_DURATION)))
except (ValueError, TypeError):
     IR_DURATION = DEFAULT_DURATION


def worker_count() -> int:
    """Worker cap, re-read so tests can patch the environment."""
    try:
        return max(1, int(os.getenv("REVERB_VERSA_THREADS", str(THREADS))))
    except (ValueError, TypeError):
        return THREADS
