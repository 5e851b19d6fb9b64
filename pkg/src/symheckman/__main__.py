import sys

from symheckman.cli import main

sys.exit(main())
