"""Benchmark the numba kernels against their numpy fallbacks.

Runs the three hot recursions (rollout, steady filter, steady smoother) on
the reduced and, with --full, the 817-compartment module, plus one full EM
iteration (E-step + M-step) on each. Usage:

    python benchmarks/bench_kernels.py [--full] [--steps N] [--repeat K]
"""

import argparse
import time

import numpy as np

from thermem import _kernels as K
from thermem.datagen import NoiseSpec, ToySpec, build_toy, generate_dataset, weak_theta
from thermem.estimation import _quadratic_terms, _theta_terms
from thermem.graph import build_operators
from thermem.model import assemble
from thermem.smoother import accumulate_stats, rtss_steady
from thermem.solvers import DareProblem, solve_dare


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_spec(spec, steps, repeat):
    mesh, weak, strong = build_toy(spec)
    ops = build_operators(mesh, weak)
    theta = weak_theta(spec)
    observed = [c.index for c in mesh.compartments if c.observed]
    model = assemble(ops, theta, observed, Q=1e-4, R=1e-6)
    traj, _ = generate_dataset(mesh, weak, theta, NoiseSpec.q_iso(1e-4), steps, seed=1, spec=spec)
    n = model.n

    V = solve_dare(DareProblem(A=model.A, C=model.C, Q=model.Q, R=model.R))
    S = model.C @ V @ model.C.T + model.R
    Kg = np.linalg.solve(S.T, (V @ model.C.T).T).T
    Vp = V - Kg @ (model.C @ V)
    Jg = np.linalg.solve(V, model.A @ Vp).T
    BP = K._input_drive(model.B, traj.P[:-1])
    T1 = np.full(n, 25.0)

    print(f"\n== {spec.name}: n={n}, N={steps} ==")
    rows = []
    xf_ref = None
    for label, nb, npy, args in (
        ("rollout", K._rollout_nb if K.HAVE_NUMBA else None, K._rollout_np, (model.A, BP, T1)),
        ("filter", K._filter_steady_nb if K.HAVE_NUMBA else None, K._filter_steady_np,
         (model.A, BP, model.C, Kg, T1, traj.y)),
    ):
        t_np = timeit(lambda: npy(*args), repeat)
        t_nb = timeit(lambda: nb(*args), repeat) if nb else float("nan")
        rows.append((label, t_nb, t_np))
    xf, _ = K._filter_steady_np(model.A, BP, model.C, Kg, T1, traj.y)
    args = (model.A, BP, Jg, xf)
    t_np = timeit(lambda: K._smooth_steady_np(*args), repeat)
    t_nb = timeit(lambda: K._smooth_steady_nb(*args), repeat) if K.HAVE_NUMBA else float("nan")
    rows.append(("smoother", t_nb, t_np))

    print(f"{'kernel':<10} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for label, t_nb, t_np in rows:
        sp = t_np / t_nb if t_nb == t_nb else float("nan")
        print(f"{label:<10} {t_nb * 1e3:>8.1f}ms {t_np * 1e3:>8.1f}ms {sp:>7.1f}x")

    def em_iteration():
        out = rtss_steady(model, traj.y, traj.P, T1)
        stats = accumulate_stats(out, traj.P)
        MQM, MQdT = _quadratic_terms(stats, ops, np.eye(n), theta.dtau)
        _theta_terms(stats, ops, theta)

    t_em = timeit(em_iteration, max(1, repeat // 2))
    print(f"one EM iteration (E-step + expected terms): {t_em:.2f}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--full", action="store_true", help="also run the 817-compartment module")
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"numba available: {K.HAVE_NUMBA}, enabled: {K.numba_enabled()}")
    if K.HAVE_NUMBA:
        # Trigger compilation outside the timed region.
        A = np.eye(3)
        BP = np.zeros((4, 3))
        K._rollout_nb(A, BP, np.zeros(3))
        K._filter_steady_nb(A, BP, np.eye(3), np.zeros((3, 3)), np.zeros(3), np.zeros((5, 3)))
        K._smooth_steady_nb(A, BP, np.zeros((3, 3)), np.zeros((5, 3)))

    bench_spec(ToySpec.reduced(), args.steps, args.repeat)
    if args.full:
        bench_spec(ToySpec.full(), args.steps, args.repeat)


if __name__ == "__main__":
    main()
