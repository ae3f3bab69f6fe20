import sys

from retroknn.cli import main

sys.exit(main())
