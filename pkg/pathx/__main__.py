import sys

from pathx.main import main

sys.exit(main())
