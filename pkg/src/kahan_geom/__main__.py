"""Module entry point: python -m kahan_geom ..."""

import sys

from .cli import main

sys.exit(main())
