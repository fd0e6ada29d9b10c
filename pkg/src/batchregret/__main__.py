import sys

from batchregret.cli import main

sys.exit(main())
