import sys

from aesad.cli import main

sys.exit(main())
