import sys

from inpaint_adapter.cli import main

sys.exit(main())
