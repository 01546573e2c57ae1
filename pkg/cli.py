"""命令行入口：python cli.py <子命令> ..."""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
