"""Cleaner that copies its input unchanged.

    python -m texscrub.plugins.identity INPUT_DIR OUTPUT_DIR
"""

import shutil
import sys
from pathlib import Path


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    shutil.copytree(Path(args[0]), Path(args[1]), dirs_exist_ok=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
