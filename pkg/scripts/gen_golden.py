#!/usr/bin/env python3
"""Regenerate the checked-in golden trajectory (tests/data/golden_trajectory.json)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

import golden_scenario


if __name__ == "__main__":
    path = golden_scenario.write_golden_file()
    print(f"wrote {path}")
