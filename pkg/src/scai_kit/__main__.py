import sys

from scai_kit.cli import main

sys.exit(main())
