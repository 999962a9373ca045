"""Entry point for ``python3 -m bubbly_honeycomb``."""

from __future__ import annotations

import sys

from .cli import main

sys.exit(main())
