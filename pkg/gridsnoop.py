"""Main entry point for GridSnoop."""

import sys
from pathlib import Path

from dotenv import load_dotenv

PROJECT_ROOT = Path(__file__).resolve().parent

load_dotenv(dotenv_path=PROJECT_ROOT / ".env", override=False)

from src.scenario.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
