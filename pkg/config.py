"""
Configuration for ActiveFT selection
"""

import os
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Config:
    """Application configuration"""

    # Worker threads for experiment cells (0 = auto)
    THREADS = int(os.getenv('ACTIVEFT_THREADS', '0'))

    # Logging / audit trail
    LOG_LEVEL = os.getenv('ACTIVEFT_LOG_LEVEL', 'INFO')
    AUDIT_LOG_PATH = os.getenv('ACTIVEFT_AUDIT_LOG', 'logs/audit.log')
    FERNET_KEY = os.getenv('FERNET_KEY')

    # Exact transport oracle is a test path, keep it small
    ORACLE_MAX_N = int(os.getenv('ACTIVEFT_ORACLE_MAX_N', '64'))

    # Optimizer defaults
    TAU = float(os.getenv('ACTIVEFT_TAU', '0.07'))
    LEARNING_RATE = float(os.getenv('ACTIVEFT_LR', '1e-3'))
    ITERATIONS = int(os.getenv('ACTIVEFT_ITERATIONS', '300'))

    @classmethod
    def threads(cls, requested: Optional[int] = None) -> int:
        """Resolve a worker count; 0 or None falls back to the environment, then the CPU count."""
        value = cls.THREADS if requested is None else requested
        if value <= 0:
            return os.cpu_count() or 1
        return value
