import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "backend"))

from cli import main as cli_main  # noqa: E402


def main():
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
