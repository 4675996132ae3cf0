#!/usr/bin/env python3
"""Print the numeric-precision probes in one go.

Covers: derivative orders an integrator's one-step map can deliver,
implicit differentiation through fixed-tolerance Newton loops, Newton on
truncated series, the warm-start hazard, and the iterated-sequence
derivative.  Equivalent to running every `hybridad table` subcommand.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hybridad.cli import _TABLES


def main() -> int:
    for name in ("rk4-derivs", "newton-sqrt", "warmstart", "sequence"):
        print(f"== {name} " + "=" * (58 - len(name)))
        sys.stdout.write(_TABLES[name]())
        print()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
