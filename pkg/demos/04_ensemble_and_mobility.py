"""Ensemble bands, how well they cover a reference path, and where buyers go.

A reference run stands in for history. The ensemble's min-max and one- and
two-sigma bands are scored against it, and first-time buyer destinations are
mapped from the cheapest submarket to the dearest.
"""

import numpy as np

from housing_abm import ParameterVector, generate_synthetic_scenario, run
from housing_abm.analysis import affordability_curve, band_summary, coverage, mobility_from_trace
from housing_abm.ensemble import monte_carlo
from housing_abm.trace import MoverKind


def main(n_runs: int = 20) -> None:
    scenario = generate_synthetic_scenario(seed=4, n_areas=10, months=24, scale=300.0)
    params = ParameterVector(h=-0.11, beta=-1.03, alpha=0.59)
    reference = run(scenario, params, seed=10_000).region_median
    ens = monte_carlo(scenario, params, n_runs=n_runs, base_seed=1)
    rep = coverage(band_summary(ens.region_series()), reference, split=18)
    print(f"coverage of the reference path: min-max {rep.minmax:.0%}, "
          f"1 sigma {rep.sigma1:.0%}, 2 sigma {rep.sigma2:.0%}")
    for name, p in rep.periods.items():
        print(f"  {name:5s} min-max {p['minmax']:.0%}")

    hm = mobility_from_trace(ens.traces[0], MoverKind.FIRST_TIME_BUYER)
    curve = affordability_curve(hm)
    print("\nfirst-time buyer destination share, cheapest area first")
    for pos, area in enumerate(hm.order):
        bar = "#" * int(round(200 * curve[pos]))
        print(f"{hm.names[area]:>5s} {curve[pos]:6.3f} {bar}")
    print(f"share into the cheaper half: {np.sum(hm.destination_share[: len(curve) // 2]):.0%}")


if __name__ == "__main__":
    main()
