#!/usr/bin/env python3
"""
Startup script for the EgoLeak toolkit.

This script checks the environment and then hands control to the
command-line front end:
- Verifies that the numerical stack is installed
- Validates that it runs from the project directory
- Forwards all arguments to ``app.main``

Usage:
    python run.py <subcommand> [options]

Author: EgoLeak Team
Version: 1.0.0
"""

import sys
from pathlib import Path

REQUIRED_PACKAGES = ["numpy", "scipy", "pandas", "dotenv"]


def check_requirements():
    """
    Check if all required Python packages are installed.

    Returns:
        bool: True if all packages are available, False otherwise
    """
    try:
        for package in REQUIRED_PACKAGES:
            __import__(package)
        return True
    except ImportError as e:
        print(f"Missing required package: {e.name}", file=sys.stderr)
        print("Install requirements with: pip install -r requirements.txt", file=sys.stderr)
        return False


def main():
    """Validate the environment, then run the requested subcommand."""
    if not (Path(__file__).resolve().parent / "app.py").exists():
        print("app.py not found next to run.py", file=sys.stderr)
        sys.exit(1)
    if not check_requirements():
        sys.exit(1)

    from app import main as app_main
    sys.exit(app_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
