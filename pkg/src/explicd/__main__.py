import sys

from explicd.cli import main

sys.exit(main())
