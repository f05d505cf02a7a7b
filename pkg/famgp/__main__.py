import sys

from famgp.cli import main

if __name__ == "__main__":
    sys.exit(main())
