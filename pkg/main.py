"""
Main entry point for the simulator
"""
import sys

from coded_backoff.cli import main

if __name__ == "__main__":
    sys.exit(main())
