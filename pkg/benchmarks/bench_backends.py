"""Benchmark the compiled integrator core against the pure numpy fallback.

Runs the reference closed-loop problem on both backends, reports steps per
second and the speedup, and cross-checks that the two produce the same
trajectory. Usage:

    python benchmarks/bench_backends.py [--t-max 5.0] [--dt 1e-3]
"""

import argparse
import time

import numpy as np

from dfscontrol import (
    DensityMatrix,
    FourLevelParams,
    InitialStateAngles,
    LyapunovController,
    build_model,
    dark_states,
    evolve,
    initial_state,
)
from dfscontrol.backend import have_kernel


def timed_run(model, controller, rho0, target, t_max, dt, backend):
    start = time.perf_counter()
    traj = evolve(
        model, controller, rho0, target, t_max=t_max, dt=dt,
        sample_every=max(1, int(round(t_max / dt / 50))), backend=backend,
    )
    return traj, time.perf_counter() - start


def bench(label, gammas, control, t_max, dt):
    params = FourLevelParams(gammas=gammas)
    model = build_model(params)
    target = dark_states(params.theta, params.phi)
    rho0 = DensityMatrix.from_pure(
        initial_state(InitialStateAngles.from_pi_units((0.2, 0.35, 0.2)))
    )
    controller = LyapunovController(model) if control else None
    n_steps = int(round(t_max / dt))

    results = {}
    for backend in ("python", "cython") if have_kernel() else ("python",):
        traj, elapsed = timed_run(model, controller, rho0, target, t_max, dt, backend)
        results[backend] = (traj, elapsed)
        print(
            f"  {label:26s} {backend:7s} {elapsed:8.3f} s   "
            f"{n_steps / elapsed:12.0f} steps/s"
        )
    if len(results) == 2:
        t_py, t_cy = results["python"][1], results["cython"][1]
        drho = np.abs(results["python"][0].rho - results["cython"][0].rho).max()
        print(f"  {'':26s} speedup {t_py / t_cy:6.1f}x   max |drho| = {drho:.2e}")
    print()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--t-max", type=float, default=5.0)
    parser.add_argument("--dt", type=float, default=1e-3)
    args = parser.parse_args()

    print(f"backends available: python{' + cython' if have_kernel() else ' only'}")
    print(f"workload: t_max={args.t_max}, dt={args.dt} "
          f"({int(round(args.t_max / args.dt))} RK4 steps, 4 stages each)\n")
    bench("control on, gamma=0", (0.0, 0.0, 0.0), True, args.t_max, args.dt)
    bench("control on, gamma=0.1", (0.1, 0.1, 0.1), True, args.t_max, args.dt)
    bench("control off, gamma=0.1", (0.1, 0.1, 0.1), False, args.t_max, args.dt)


if __name__ == "__main__":
    main()
