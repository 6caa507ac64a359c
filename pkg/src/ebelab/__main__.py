"""``python -m ebelab CONFIG``."""

import sys

from .cli import main

sys.exit(main())
