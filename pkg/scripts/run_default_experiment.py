#!/usr/bin/env python3
"""Run the default 50-trial experiment and write results under results/.

Equivalent to `prosumernet run --out results/default --verbose`; kept as
a script so the standard experiment is one command away.
"""

import sys

from prosumernet.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--out", "results/default", "--verbose", *sys.argv[1:]]))
