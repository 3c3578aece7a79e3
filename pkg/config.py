import os
from dotenv import load_dotenv

load_dotenv()

__version__ = "1.0.0"

# Output and logging locations
OUTPUT_ROOT = os.getenv("LOOKDOWN_OUTPUT_ROOT", "./runs")
LOG_DIR = os.getenv("LOOKDOWN_LOG_DIR", "./logs")
LOG_LEVEL = os.getenv("LOOKDOWN_LOG_LEVEL", "INFO")

# Engine guards
PARTICLE_CAP = int(float(os.getenv("LOOKDOWN_PARTICLE_CAP", "1e7")))
WORKERS = int(os.getenv("LOOKDOWN_WORKERS", str(os.cpu_count() or 1)))

# Statistical thresholds
SIGNIFICANCE = float(os.getenv("LOOKDOWN_SIGNIFICANCE", "0.001"))
SIGMA = float(os.getenv("LOOKDOWN_SIGMA", "3.0"))

# Numerical settings
MC_DRAWS = int(float(os.getenv("LOOKDOWN_MC_DRAWS", "1e5")))
GRID_SIZE = int(os.getenv("LOOKDOWN_GRID_SIZE", str(2 ** 14)))
QUAD_TOL = float(os.getenv("LOOKDOWN_QUAD_TOL", "1e-9"))
LEVEL_SLAB = float(os.getenv("LOOKDOWN_LEVEL_SLAB", "1.0"))
FLOW_RTOL = float(os.getenv("LOOKDOWN_FLOW_RTOL", "1e-10"))

# CLI exit codes
EXIT_CODES = {
    "ok": 0,
    "test_failure": 1,
    "config_error": 2,
    "particle_cap": 3,
}
EXIT_OK = EXIT_CODES["ok"]
EXIT_TEST_FAILURE = EXIT_CODES["test_failure"]
EXIT_CONFIG_ERROR = EXIT_CODES["config_error"]
EXIT_PARTICLE_CAP = EXIT_CODES["particle_cap"]

PRESETS = [
    "moran",
    "branching",
    "slfv-first",
    "slfv-second",
    "voter",
    "pure-death",
]

VERIFY_SUITES = [
    "poisson-identities",
    "uniformity",
    "projection",
    "generator",
    "lambda-convergence",
    "genealogy",
    "all",
]

# Replicate counts used by the verify suites when a run config gives none
SUITE_DEFAULT_REPS = {
    "poisson-identities": 100_000,
    "uniformity": 1_000,
    "projection": 10_000,
    "generator": 100_000,
    "lambda-convergence": 200,
    "genealogy": 10_000,
}

# Output file names inside a run directory
RUN_FILES = {
    "manifest": "manifest.json",
    "summary": "summary.json",
    "counts": "counts.csv",
    "events": "events.csv",
    "lineage": "lineage.csv",
    "snapshot": "snapshot_{index:04d}.csv",
    "replicate_dir": "replicate_{index:04d}",
    "reports": "reports.csv",
    "newick": "trees.nwk",
    "coalescence": "coalescence.json",
    "identities": "identities.csv",
}
