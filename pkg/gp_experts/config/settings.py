import os
from dotenv import load_dotenv

# Dotenv variables
load_dotenv()


def _pair(prefix: str, shape: str, scale: str) -> tuple:
    return (
        float(os.getenv(f"{prefix}_SHAPE", shape)),
        float(os.getenv(f"{prefix}_SCALE", scale)),
    )


# Prior table (gamma priors are (shape, scale))
SIGMA2_PRIOR = _pair("GPKSBP_SIGMA2", "2", "2")
LENGTH_SCALE_PRIOR = _pair("GPKSBP_LENGTH_SCALE", "2", "0.5")
NOISE_VAR_PRIOR = _pair("GPKSBP_NOISE_VAR", "2", "0.5")
KERNEL_WIDTH_PRIOR = _pair("GPKSBP_KERNEL_WIDTH", "2", "0.5")
P_ALPHA = float(os.getenv("GPKSBP_P_ALPHA", "0.5"))
P_BETA = float(os.getenv("GPKSBP_P_BETA", "0.5"))
RG_BETA_PRIOR = _pair("GPKSBP_RG_BETA", "2", "1")

# HMC configuration
HMC_LEAPFROG_STEPS = int(os.getenv("GPKSBP_HMC_LEAPFROG_STEPS", "5"))
HMC_STEP_CAP = float(os.getenv("GPKSBP_HMC_STEP_CAP", "0.05"))
HMC_TARGET_ACCEPT = float(os.getenv("GPKSBP_HMC_TARGET_ACCEPT", "0.8"))
HMC_INITIAL_STEP = float(os.getenv("GPKSBP_HMC_INITIAL_STEP", "0.01"))

# Dual averaging constants
DA_GAMMA = 0.05
DA_T0 = 10
DA_KAPPA = 0.75

# Numerics
COVARIANCE_JITTER = 1e-8
PIVOT_THRESHOLD = 1e-12
CACHE_REFRESH_EVERY = 500
MAX_TRUNCATION = 10_000

# Run defaults
TOTAL_ITERATIONS = int(os.getenv("GPKSBP_ITERS", "20000"))
BURN_IN = int(os.getenv("GPKSBP_BURNIN", "10000"))
THIN = int(os.getenv("GPKSBP_THIN", "100"))
SEEDS = os.getenv("GPKSBP_SEEDS", "0..29")
WORKERS = int(os.getenv("GPKSBP_WORKERS", "1"))

# --fast profile (desk-scale acceptance runs)
FAST_PROFILE = {
    "total_iterations": 4000,
    "burn_in": 2000,
    "thin": 20,
    "seeds": "0..4",
}

# Demo
DEMO_THIN = int(os.getenv("GPKSBP_DEMO_THIN", "20"))
DEMO_FIXED_NOISE_VAR = 1e-6
DEMO_BOX = (-2.0, 6.0)
PREDICTIVE_SAMPLES = 500
DIAGONAL_LOCATIONS = 9

# Benchmark designs
N_TRAIN = 30
N_TEST = 300

# Paths
OUTPUT_DIR = os.getenv("GPKSBP_OUTPUT_DIR", "results")
RUN_STORE_NAME = os.getenv("GPKSBP_RUN_STORE", "runs.db")
LOG_FILE = os.getenv("GPKSBP_LOG_FILE", "gp_experts.log")
LOG_LEVEL = os.getenv("GPKSBP_LOG_LEVEL", "INFO")
