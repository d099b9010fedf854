"""Run the bilevel heuristic on the toy corridor and save its incumbent curve.

Writes iterations.csv and a time-space diagram of the final plan to the
current directory. Usage: python demos/bilevel_curve.py [beta] [iterations]
"""
import sys

from rhythmic.bilevel import VnsParams, run_bilevel
from rhythmic.network import toy_scenario
from rhythmic.plot import plan_diagram, resolve_path, write_svg
from rhythmic.rhythm import rhythm_from_times


def main() -> None:
    beta = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
    k = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    s = toy_scenario(beta, 0.8)
    rh = rhythm_from_times(s)
    res = run_bilevel(s, rh, VnsParams(max_iter=k))
    res.write_log("iterations.csv")
    write_svg(plan_diagram(s, rh, res.plan, resolve_path(s, "0:0"), title=f"toy beta={beta}"),
              "toy-plan.svg")
    first = res.log[0].incumbent if res.log else res.lp_objective
    print(f"LP-L start {first:.2f} -> {res.lp_objective:.2f}; MILP-L {res.milp_objective:.2f}")
    print(f"O_a {res.breakdown.O_a:.2f}  O_b {res.breakdown.O_b:.2f}")


if __name__ == "__main__":
    main()
