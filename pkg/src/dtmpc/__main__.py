#!/usr/bin/env python3
"""
Entry point for ``python -m dtmpc`` and the standalone dtmpc executable.
"""

from dtmpc.cli import main

if __name__ == "__main__":
    main()
