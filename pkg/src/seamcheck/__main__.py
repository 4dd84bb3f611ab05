"""Allow running the CLI as `python3 -m seamcheck`."""

import sys

from seamcheck.cli import main

if __name__ == "__main__":
    sys.exit(main())
