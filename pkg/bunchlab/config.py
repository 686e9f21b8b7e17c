import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    """
    Base configuration for bunchlab.
    Loads settings from environment variables; every value has a typed default.
    """
    # Runtime
    THREADS = int(os.getenv('BUNCHLAB_THREADS', 0))  # 0 = os.cpu_count()
    SEED = int(os.getenv('BUNCHLAB_SEED', 0))

    # Logging
    LOG_LEVEL = os.getenv('BUNCHLAB_LOG_LEVEL', 'INFO').upper()
    LOG_FILE = os.getenv('BUNCHLAB_LOG_FILE', 'logs/bunchlab.log')

    # Numerical tolerances
    HERMITIAN_TOL = float(os.getenv('BUNCHLAB_HERMITIAN_TOL', 1e-10))
    PSD_REL_TOL = float(os.getenv('BUNCHLAB_PSD_REL_TOL', 1e-12))
    ENGINE_TOL = float(os.getenv('BUNCHLAB_ENGINE_TOL', 1e-7))
    LAPLACE_TOL = float(os.getenv('BUNCHLAB_LAPLACE_TOL', 1e-9))
    JACOBI_TOL = 1e-13
    JACOBI_MAX_SWEEPS = 100

    # Size guards
    PERM_MAX_N = int(os.getenv('BUNCHLAB_PERM_MAX_N', 24))
    NAIVE_MAX_N = int(os.getenv('BUNCHLAB_NAIVE_MAX_N', 9))
    MIXED_MAX_TERMS = int(os.getenv('BUNCHLAB_MIXED_MAX_TERMS', 2 ** 20))

    # Violation-ratio scan defaults
    SCAN_D_MAX = float(os.getenv('BUNCHLAB_SCAN_D_MAX', 2.0))
    SCAN_POINTS = int(os.getenv('BUNCHLAB_SCAN_POINTS', 2001))

    @classmethod
    def workers(cls) -> int:
        """Effective worker count for thread pools."""
        if cls.THREADS > 0:
            return cls.THREADS
        return os.cpu_count() or 1

    @classmethod
    def override(cls, **values) -> None:
        """Applies CLI overrides (None values are ignored)."""
        for key, value in values.items():
            if value is None:
                continue
            attr = key.upper()
            if not hasattr(cls, attr):
                raise AttributeError(f"Unknown configuration key: {key}")
            setattr(cls, attr, type(getattr(cls, attr))(value))
