import sys

from orthovae.cli import main

sys.exit(main())
