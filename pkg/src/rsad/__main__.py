import sys

from rsad.cli import main

sys.exit(main())
