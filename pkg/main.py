from __future__ import annotations
import sys
from src.pipeline import run_cli

def main() -> None:
    """
    Entry point de la app.

    :return: None
    :rtype: None
    """
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
