#!/usr/bin/env python3
"""Sampling-rate study for the second-order damping optimization.

Reruns the cost-tuning experiment across observation intervals of the
rate-transition channel, comparing the finite-difference jacobian of the
observed cost against the propagated sensitivity ("ad").  Coarse
observation starves the finite difference (it collapses to zero inside
the channel's quantization) while the sensitivity channel keeps working.

Usage:
    python scripts/rate_study.py [--step 0.005] [--tf 10]
"""

import argparse
import math
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hybridad import SimConfig, parse_diagram
from hybridad.cli import optimize_scalar

MODEL = os.path.join(os.path.dirname(__file__), "..", "models",
                     "second_order_cost.json")
TARGET = math.sqrt(2.0) / 2.0


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--step", type=float, default=0.005)
    ap.add_argument("--tf", type=float, default=10.0)
    args = ap.parse_args()

    with open(MODEL) as fh:
        d = parse_diagram(fh.read())
    config = SimConfig(step=args.step, tf=args.tf)

    print(f"target zeta = {TARGET:.16f}  (step {args.step}, tf {args.tf})")
    print(f"{'decimate':>10} {'jacobian':>9} {'zeta_opt':>12} {'iters':>6} "
          f"{'|err|':>10} {'secs':>6}")
    for decimate in (0.5, 0.1, 0.05, 0.01, None):
        for jac in ("fd", "ad"):
            t0 = time.monotonic()
            res = optimize_scalar(d, "zeta", "integrand", config,
                                  theta0=0.1, jacobian=jac, decimate=decimate)
            dt = time.monotonic() - t0
            z = res["theta_opt"]
            print(f"{str(decimate):>10} {jac:>9} {z:>12.8f} "
                  f"{res['iterations']:>6d} {abs(z - TARGET):>10.2e} {dt:>6.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
