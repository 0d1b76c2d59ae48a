"""Build a synthetic city, burn it in, and watch one run of the market.

Prints the regional median price, deal volume and listing stock per month,
then the five priciest and cheapest submarkets at the end.
"""

import numpy as np

from housing_abm import ParameterVector, generate_synthetic_scenario, run


def main() -> None:
    scenario = generate_synthetic_scenario(seed=3, n_areas=12, months=24, scale=200.0)
    params = ParameterVector(h=-0.11, beta=-1.03, alpha=0.59)
    trace = run(scenario, params, seed=0)

    print(f"{scenario.name}: {trace.households[0]} households in {scenario.n_areas} areas")
    print("month  median_price  deals  listings")
    for m, p, d, l in zip(trace.month, trace.region_median, trace.n_deals, trace.n_listings):
        print(f"{m:5d}  {p:12,.0f}  {d:5d}  {l:8d}")

    final = trace.area_median[-1]
    order = np.argsort(final)
    names = trace.area_names
    print("cheapest:", ", ".join(f"{names[i]} {final[i]:,.0f}" for i in order[:5]))
    print("dearest: ", ", ".join(f"{names[i]} {final[i]:,.0f}" for i in order[::-1][:5]))


if __name__ == "__main__":
    main()
