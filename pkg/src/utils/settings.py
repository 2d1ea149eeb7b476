import os
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load .env file explicitly
load_dotenv()

REPO_ROOT = Path(__file__).resolve().parents[2]


class Settings(BaseModel):
    """Process-wide defaults. Command-line flags override them."""

    log_level: str = Field("INFO", description="Root logging level")
    jobs: int = Field(1, ge=1, description="Worker processes for per-scenario parallelism")
    seed: int = Field(0, description="Seed used when a command gets no --seed")
    config_dir: Path = Field(REPO_ROOT / "configs", description="Bundled JSON configuration")

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            log_level=os.getenv("DIHRNN_LOG_LEVEL", "INFO"),
            jobs=int(os.getenv("DIHRNN_JOBS", "1")),
            seed=int(os.getenv("DIHRNN_SEED", "0")),
            config_dir=Path(os.getenv("DIHRNN_CONFIG_DIR", str(REPO_ROOT / "configs"))),
        )


# Global instance
settings = Settings.from_env()
