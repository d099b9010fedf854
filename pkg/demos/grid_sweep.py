"""Compare RC-H with fixed-time signals on the grid over a demand sweep.

Usage: python demos/grid_sweep.py [seeds] [duration]
"""
import sys

from rhythmic.bilevel import bus_only_plan
from rhythmic.network import grid_scenario
from rhythmic.rhythm import design_background_rhythm
from rhythmic.sim import ControlScheme, demand_sweep, write_report_csv


def main() -> None:
    seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 1
    duration = float(sys.argv[2]) if len(sys.argv) > 2 else 3600.0
    s = grid_scenario(0.5)
    rh = design_background_rhythm(s)
    controls = [ControlScheme.rch(bus_only_plan(s, rh), rh), ControlScheme.tsc(15),
                ControlScheme.tsc(15, dbl=True), ControlScheme.tsc(30), ControlScheme.tsc(30, dbl=True)]
    reports = demand_sweep(s, controls, [0.1, 0.3, 0.5, 0.7, 0.9, 1.2], duration,
                           repetitions=seeds)
    write_report_csv(reports, "grid-report.csv")
    for r in reports:
        print(f"{r.control:>16} {r.demand_level:4.1f}  car {r.mean_car_time:7.1f}  "
              f"bus {r.mean_bus_time:7.1f}  {r.throughput:7.0f} veh/h")


if __name__ == "__main__":
    main()
