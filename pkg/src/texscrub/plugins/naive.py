"""Deliberately naive cleaner: drops every line that contains ``%``.

    python -m texscrub.plugins.naive INPUT_DIR OUTPUT_DIR
"""

import shutil
import sys
from pathlib import Path


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    src, dst = Path(args[0]), Path(args[1])
    shutil.copytree(src, dst, dirs_exist_ok=True)
    for tex in dst.rglob("*.tex"):
        tex.chmod(0o644)
        lines = tex.read_bytes().splitlines(keepends=True)
        tex.write_bytes(b"".join(line for line in lines if b"%" not in line))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
