#!/usr/bin/env python3
"""Run the full experiment for a scenario file.

Equivalent to `python -m fracbiot run --scenario ... [--out ...] [--threads N]`.
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from fracbiot.cli import main

if __name__ == "__main__":
    sys.exit(main(["run"] + sys.argv[1:]))
