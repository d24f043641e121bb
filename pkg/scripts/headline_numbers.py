"""Print the closed-form quantities implied by the preset transfer coefficients."""

import argparse

from xferlaw.predictor import data_vs_model_tradeoff, fewshot_effective_data
from xferlaw.transfer import PRESETS, evaluate_transfer


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=float, default=1.75e11, help="model size for the few-shot numbers")
    ap.add_argument("--context", type=float, default=300, help="characters of few-shot context")
    args = ap.parse_args()

    for name, c in sorted(PRESETS.items()):
        zero = fewshot_effective_data(c, args.n, 1)
        few = fewshot_effective_data(c, args.n, args.context)
        print(f"[{name}] k={c.k:g} alpha={c.alpha:g} beta={c.beta:g}")
        print(f"  zero-shot effective data at N={args.n:g}: {zero.d_effective:.3g} chars")
        print(f"  multiplier at {args.context:g} chars of context: {few.multiplier_vs_zero_shot:.3f}")
        print(f"  model factor equivalent to 100x data: {data_vs_model_tradeoff(c, 100).equivalent_model_factor:.3f}")
        print(f"  D_T/D_F at N=4e7, D_F=3e5: {evaluate_transfer(c, 4e7, 3e5) / 3e5:.0f}")


if __name__ == "__main__":
    main()
