#!/usr/bin/env python3
"""
Run the pddkit command line.

Usage:
    python run_pddkit.py pdd structures/ --k 15 --tol 1e-4
    python run_pddkit.py dist --matrix runs/<run>/
"""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from cli.main import main


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\npddkit stopped by user", file=sys.stderr)
        sys.exit(130)
