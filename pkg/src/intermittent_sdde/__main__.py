"""
Main entry point for the intermittent-sdde package.

This module allows the package to be executed as:
    python -m intermittent_sdde
"""

import sys
from .main import main

if __name__ == "__main__":
    sys.exit(main())
