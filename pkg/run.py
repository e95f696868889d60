#!/usr/bin/env python3
"""
Entry point script for wpflow
This is a convenience wrapper that runs the main application from the wpflow package
"""

if __name__ == "__main__":
    import sys
    from wpflow.main import main

    sys.exit(main())
