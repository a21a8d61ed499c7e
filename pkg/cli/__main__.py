# cli/__main__.py
# Thiqa - `python -m cli`

import sys

from cli.app import main

sys.exit(main())
