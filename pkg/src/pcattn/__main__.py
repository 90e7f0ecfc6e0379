"""Module entry point: `python -m pcattn` behaves like the `pcattn` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
