"""Solve the joint design model on the toy corridor and print its cost breakdown.

Usage: python demos/toy_milp_o.py [beta] [omega]
"""
import sys
import time

from rhythmic.bilevel import VnsParams, run_bilevel
from rhythmic.design import solve_milp_o
from rhythmic.network import toy_scenario
from rhythmic.rhythm import rhythm_from_times


def main() -> None:
    beta = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
    omega = float(sys.argv[2]) if len(sys.argv) > 2 else 0.9
    s = toy_scenario(beta, omega)
    rh = rhythm_from_times(s)
    t0 = time.perf_counter()
    start = run_bilevel(s, rh, VnsParams(max_iter=300)).plan
    plan, b, sol = solve_milp_o(s, rh, time_limit=600, start=start)
    print(f"beta={beta} omega={omega} status={sol.status} gap={sol.gap:.4f} "
          f"time={time.perf_counter() - t0:.1f}s")
    for key, value in b.table_row().items():
        print(f"  {key:>8}: {value:.4g}")


if __name__ == "__main__":
    main()
