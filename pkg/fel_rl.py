# fel_rl.py
import sys

from felrl.core import main

if __name__ == "__main__":
    sys.exit(main())
