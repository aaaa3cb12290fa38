import os
from typing import Optional
from dotenv import load_dotenv

# Load environment variables from .env file if it exists
load_dotenv()


def _env_int(name: str, default: int) -> int:
    """Integer environment variable, ``default`` when unset or empty."""
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


def _env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


# Pipeline defaults with environment overrides (.env or shell)
DEFAULT_METHOD: str = os.getenv("FAIRTRANSPORT_METHOD", "algorithm1")
DEFAULT_PERMUTATIONS: int = _env_int("FAIRTRANSPORT_PERMUTATIONS", 999)
DEFAULT_P_THRESHOLD: float = _env_float("FAIRTRANSPORT_P_THRESHOLD", 0.05)

# Sinkhorn numerics
SINKHORN_TOL: float = _env_float("FAIRTRANSPORT_SINKHORN_TOL", 1e-9)
SINKHORN_MAX_ITER: int = _env_int("FAIRTRANSPORT_SINKHORN_MAX_ITER", 10_000)
EPSILON_SCALE: float = _env_float("FAIRTRANSPORT_EPSILON_SCALE", 0.05)

# Common rank grid for the 1-d quantile barycenter
QUANTILE_GRID_CAP: int = _env_int("FAIRTRANSPORT_QUANTILE_GRID_CAP", 10_000)

# Certificate constants
SCHEMA_VERSION = "1.0"
CERTIFICATE_CONTEXT = "urn:fairtransport:certificate:v1"
METHODS = ("algorithm1", "quantile1d")


def seed_from_env() -> Optional[int]:
    """Seed fallback from ``FAIRTRANSPORT_SEED``; ``None`` when unset."""
    value = os.getenv("FAIRTRANSPORT_SEED")
    if value in (None, ""):
        return None
    return int(value)


def configure(
    method: Optional[str] = None,
    permutations: Optional[int] = None,
    p_threshold: Optional[float] = None,
    sinkhorn_tol: Optional[float] = None,
    sinkhorn_max_iter: Optional[int] = None,
    epsilon_scale: Optional[float] = None,
    quantile_grid_cap: Optional[int] = None,
) -> None:
    """
    Update the global pipeline defaults at runtime.

    Values left as ``None`` keep their current setting.

    Example:
        >>> import fairtransport
        >>> fairtransport.configure(permutations=199, p_threshold=0.01)
    """
    global DEFAULT_METHOD, DEFAULT_PERMUTATIONS, DEFAULT_P_THRESHOLD
    global SINKHORN_TOL, SINKHORN_MAX_ITER, EPSILON_SCALE, QUANTILE_GRID_CAP
    if method is not None:
        if method not in METHODS:
            raise ValueError(f"Unknown method '{method}'. Expected one of {METHODS}.")
        DEFAULT_METHOD = method
    if permutations is not None: DEFAULT_PERMUTATIONS = permutations
    if p_threshold is not None: DEFAULT_P_THRESHOLD = p_threshold
    if sinkhorn_tol is not None: SINKHORN_TOL = sinkhorn_tol
    if sinkhorn_max_iter is not None: SINKHORN_MAX_ITER = sinkhorn_max_iter
    if epsilon_scale is not None: EPSILON_SCALE = epsilon_scale
    if quantile_grid_cap is not None: QUANTILE_GRID_CAP = quantile_grid_cap
