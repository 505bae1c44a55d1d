import sys

from fracinv.cli import main

sys.exit(main())
