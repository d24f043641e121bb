"""Compare the fitted D(N) with the exact 99%-of-floor data requirement.

Power-plus-constant fits to single from-scratch curves drawn from the
two-term surface overestimate the level of D(N); this script shows by how
much for a given surface and optional tail window.
"""

import argparse

import numpy as np

from xferlaw.regime import estimate_dn
from xferlaw.runs import baseline_curves
from xferlaw.synth import GroundTruth, analytic_dn, generate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--window", type=float, nargs="*", default=[None, 1.5, 1.2, 1.05],
                    help="fit only losses within this factor of each curve's best")
    args = ap.parse_args()

    truth = GroundTruth()
    p = truth.scaling
    curves = list(baseline_curves(generate(truth)).values())
    true_exp = p.alpha_n / p.alpha_d
    print(f"exact exponent {true_exp:.4f}")
    for window in args.window:
        window = None if window in (None, "None") else float(window)
        try:
            dn = estimate_dn(curves, window=window)
        except ValueError as exc:
            print(f"window={window}: failed ({exc})")
            continue
        ratios = [float(dn.d_of_n(n)) / float(analytic_dn(p, n)) for n in truth.n_grid]
        print(f"window={window}: exponent {dn.exponent:.4f} ({dn.exponent / true_exp - 1:+.1%}), "
              f"level ratio fitted/exact {np.min(ratios):.2f}..{np.max(ratios):.2f}")


if __name__ == "__main__":
    main()
