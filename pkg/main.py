#!/usr/bin/env python
"""Entry point for the critical-set laboratory CLI."""

from src.cli import main

if __name__ == "__main__":
    main()
