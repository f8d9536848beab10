import sys

from tda.cli import main

sys.exit(main())
