#!/usr/bin/env python3
"""
GMNSE Lab - Entry Point
Run one experiment, e.g. `python run.py simulate --config configs/default.yaml`
"""

import os
import sys

# The package is imported as lib.*, so the project root goes on the path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from lib.runner import main

if __name__ == '__main__':
    sys.exit(main())
