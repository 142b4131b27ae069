#!/usr/bin/env python3
"""
gcmcf - main entry point
"""

from src.cli import main

if __name__ == "__main__":
    main()
