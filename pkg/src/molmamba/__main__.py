import sys

from molmamba.cli import main

sys.exit(main())
