"""Optimality gap against horizon under the theorem-prescribed parameters.

For each ``T`` the schedule is recomputed from the instance constants and
the graph, the ensemble median gap at the final round is reported, and the
log-log slope between consecutive horizons is printed.
"""

import argparse

import numpy as np

from mazfo import build_topology, compute_theorem_params, generate_quadratic, run, solve_reference


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--m", type=int, default=1)
    ap.add_argument("--eig-min", type=float, default=1.0)
    ap.add_argument("--eig-max", type=float, default=1.6)
    ap.add_argument("--topology", default="ring")
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--horizons", type=int, nargs="+", default=[1000, 4000, 16_000])
    args = ap.parse_args(argv)

    inst, _ = generate_quadratic(args.seed, n=args.n, dims=args.d, m=args.m,
                                 eig_range=(args.eig_min, args.eig_max))
    ref = solve_reference(inst, 1e-9)
    C = ref.suggested_C()
    topo = build_topology(args.topology, inst.n)
    print(f"f* = {ref.f_star:.8f}  |y*| = {ref.y_norm:.4g}  rho = {topo.rho:.4f}")
    print(f"{'T':>8} {'eta_t':>10} {'mu':>10} {'u':>10} {'median gap':>12} {'slope':>7}")
    prev = None
    for T in args.horizons:
        th = compute_theorem_params(inst, topo, T, C)
        sched = th.schedule(C)
        gaps = [run(inst, topo, sched, 0, T, trial=k, stride=T).objective[-1] - ref.f_star
                for k in range(args.trials)]
        med = float(np.median(gaps))
        slope = "" if prev is None else f"{np.log(med / prev[1]) / np.log(T / prev[0]):7.3f}"
        print(f"{T:8d} {th.eta_step:10.3e} {th.mu:10.3e} {th.u:10.3e} {med:12.5g} {slope}")
        prev = (T, med)


if __name__ == "__main__":
    main()
