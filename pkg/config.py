"""
Configuration module - loads settings from environment variables.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load .env file from project root
load_dotenv(Path(__file__).parent / '.env')

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


class Config:
    """Process-level configuration loaded from environment."""

    # Where generate/simulate/verify/robustness write when no --out is given
    OUTPUT_DIR: Path = Path(os.getenv('BOOTSTRAP_OUTPUT_DIR', './runs'))

    # Default worker count for per-specimen and per-cell work
    WORKERS: str = os.getenv('BOOTSTRAP_WORKERS', '1')

    # Run ledger (SQLAlchemy URL); empty disables it
    LEDGER_URL: str = os.getenv('BOOTSTRAP_LEDGER_URL', '')

    LOG_LEVEL: str = os.getenv('BOOTSTRAP_LOG_LEVEL', 'INFO').upper()

    # Rows buffered before the ledger commits
    LEDGER_BATCH_SIZE: int = 50

    @classmethod
    def workers(cls) -> int:
        return int(cls.WORKERS)

    @classmethod
    def validate(cls) -> list[str]:
        """Validate configuration. Returns list of problems."""
        problems = []
        if not cls.WORKERS.isdigit() or int(cls.WORKERS) < 1:
            problems.append(f"BOOTSTRAP_WORKERS must be a positive integer, got {cls.WORKERS!r}")
        if cls.LOG_LEVEL not in LOG_LEVELS:
            problems.append(f"BOOTSTRAP_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {cls.LOG_LEVEL!r}")
        return problems


config = Config()
