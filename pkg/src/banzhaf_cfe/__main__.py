import sys

from banzhaf_cfe.cli import main

sys.exit(main())
