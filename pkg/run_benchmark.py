#!/usr/bin/env python3
"""Launcher for the benchmark CLI: ``python run_benchmark.py setting-two -v``."""
import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
