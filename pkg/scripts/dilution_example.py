#!/usr/bin/env python3
"""Worked container-dilution example with duty exposure.

Sweeps the number of misdeclared containers in a 50-container consignment
and prints the blended unit price, the customs overstatement, and the duty
band that opens up between the declared polymer code and scrap.
"""

import argparse

from scrapsig.risk import DilutionScenario, TariffTable, dilution_model, duty_gap


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--containers", type=int, default=50)
    ap.add_argument("--kg-per-container", type=float, default=4000.0)
    ap.add_argument("--declared-price", type=float, default=5.0)
    ap.add_argument("--scrap-price", type=float, default=0.5)
    ap.add_argument("--declared-code", default="390110")
    ap.add_argument("--true-code", default="391530")
    args = ap.parse_args()

    table = TariffTable.default()
    header = f"{'poisoned':>8} {'blended $/kg':>12} {'overstated $':>13} {'duty band $':>22}"
    print(header)
    print("-" * len(header))
    for n_poisoned in range(0, args.containers + 1, 5):
        scenario = DilutionScenario(
            n_containers=args.containers,
            n_poisoned=n_poisoned,
            kg_per_container=args.kg_per_container,
            declared_price=args.declared_price,
            scrap_price=args.scrap_price,
        )
        result = dilution_model(scenario)
        lo, hi = duty_gap(
            args.declared_code, args.true_code, float(result["actual_value"]), table
        )
        print(
            f"{n_poisoned:>8} {float(result['blended_price']):>12.4f}"
            f" {float(result['overstatement_usd']):>13,.0f}"
            f" {lo:>10,.0f} .. {hi:>9,.0f}"
        )


if __name__ == "__main__":
    main()
