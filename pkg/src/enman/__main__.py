import sys

from enman.cli import main

sys.exit(main())
