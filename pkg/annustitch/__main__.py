import sys

from annustitch.main import main

sys.exit(main())
