import sys

from .aerial_radio_map import main

if __name__ == '__main__':
    sys.exit(main())
