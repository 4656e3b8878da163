#!/usr/bin/env python3
"""Sample-size sensitivity sweep (medians over paired community draws)."""

import sys

from prosumernet.cli import main

if __name__ == "__main__":
    sys.exit(main(["sensitivity", "--sweep", "samples", "--values", "20,50,100",
                   "--out", "results/sensitivity", *sys.argv[1:]]))
