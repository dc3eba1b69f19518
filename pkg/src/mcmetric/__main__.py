"""Allow ``python -m mcmetric``."""

import sys

from .cli import main

sys.exit(main())
