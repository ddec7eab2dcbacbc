import sys

from phdct.cli import main

sys.exit(main())
