#!/usr/bin/env python3
"""
Command line entry for the covert channel toolkit
Usage: python backend/main.py <catalog|settings|run|calibrate|trace> ...
"""

import sys
from pathlib import Path

# Make the cct package importable when started from the repository root
sys.path.append(str(Path(__file__).resolve().parent))

from cct.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
