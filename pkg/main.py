"""
vdt-qoe - Main Application Entry Point

Runs the virtual drive test pipeline from the command line:

    python main.py [--config run.ini] [--seed N] [--out DIR] <command>

where <command> is one of generate, ingest, features, train-pattern,
train-predictor, detect, explain, report.
"""

import sys

from src.cli import main
from src.core.config import load_env_settings


if __name__ == "__main__":
    load_env_settings()
    sys.exit(main())
