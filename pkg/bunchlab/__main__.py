import sys

from bunchlab.cli import main

sys.exit(main())
