import os

from dotenv import load_dotenv

load_dotenv()


# Logging configuration
LOG_LEVEL = os.getenv("FAMGP_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("FAMGP_LOG_FILE", "famgp.log")

# Eigen expansion configuration
EIGENVALUE_FLOOR = float(os.getenv("FAMGP_EIGENVALUE_FLOOR", "1e-14"))  # relative to max eigenvalue
SE_ALPHA = float(os.getenv("FAMGP_SE_ALPHA", "1.0"))  # global scaling factor of the SE eigenfunctions
SE_NORMALIZATION = os.getenv("FAMGP_SE_NORMALIZATION", "reference")  # "reference" or "alternate"
PERIODIC_COEFFICIENTS = os.getenv("FAMGP_PERIODIC_COEFFICIENTS", "gaussian")  # "gaussian" or "bessel"

# Factorization configuration
JITTER_START = float(os.getenv("FAMGP_JITTER_START", "1e-12"))  # times trace / size
JITTER_MAX = float(os.getenv("FAMGP_JITTER_MAX", "1e-6"))
JITTER_GROWTH = 10.0

# Prediction configuration
EXTRAPOLATION_SLACK = float(os.getenv("FAMGP_EXTRAPOLATION_SLACK", "0.05"))

# Statistics are accumulated over row chunks of this size
CHUNK_ROWS = int(os.getenv("FAMGP_CHUNK_ROWS", "65536"))

# Dense oracle size guards
EXACT_MAX_N = int(os.getenv("FAMGP_EXACT_MAX_N", "4000"))
EXACT_MAX_NM = int(os.getenv("FAMGP_EXACT_MAX_NM", "6000"))

# Serving configuration
MODEL_PATH = os.getenv("FAMGP_MODEL_PATH", "results/model.json")
MODEL_DIR = os.getenv("FAMGP_MODEL_DIR", "results")  # POST /model only loads files under this directory

# Serialized model documents carry this version
MODEL_SCHEMA_VERSION = 1
