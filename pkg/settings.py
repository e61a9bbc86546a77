import os
from dotenv import load_dotenv
from pathlib import Path

ROOT = Path(__file__).resolve().parent
load_dotenv(ROOT / ".env", override=False)

ORACLE_CMD_ENV = "LOOSEROPE_ORACLE_CMD"
ORACLE_URL = os.getenv("LOOSEROPE_ORACLE_URL", "")
ORACLE_TOKEN = os.getenv("LOOSEROPE_ORACLE_TOKEN", "")
LOG_FILE = os.getenv("LOOSEROPE_LOG_FILE", "")

# --- RoPE ---
THETA_BASE = 10000.0
BLOCK_OFFSET = 0           # input-image tokens share the output grid

# --- Saliency ---
BLUR_SIZE = 5
BLUR_SIGMA = 1.1
QUANT_LEVELS = 5
DEGENERATE_RANGE = 1e-8

# --- Modulation curves (r: inverse range, k: crop attention factor) ---
R_LOW, R_HIGH, R_STEEPNESS = 0.65, 1.0, 3.5
K_LOW, K_HIGH, K_STEEPNESS = 0.65, 1.34, 6.5
CURVE_CENTER = 0.0         # 0.5 makes the full [v_min, v_max] range reachable

# relaxation stages: (from_timestep, r_low, k_low, k_high)
RELAX_STAGES = (
    (0, 0.65, 0.65, 1.34),
    (10, 0.9, 0.76, 1.24),
    (18, 1.0, 0.84, 1.17),
)
TOTAL_STEPS = 28
MODULATION_WINDOW = 22

# --- Steering ---
LAMBDA0 = 0.83
DELTA_DOWN = 0.045         # on Neglect
DELTA_UP = 0.05            # on Suppression
MAX_TRIES = 4
EVAL_TIMESTEP = 2
RATIO_LOW = 0.8            # ThresholdOracle bands, heuristic
RATIO_HIGH = 1.6

# --- Toy harness ---
GRID = (8, 8)
HEAD_COUNT = 2
HEAD_DIM = 16
LAYER_COUNT = 4            # FLUX Kontext has 58
RESIDUAL_KEEP = 0.9
SEED = 0

DATA_DIR = ROOT / "data"
