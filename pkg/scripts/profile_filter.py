#!/usr/bin/env python3
"""Micro-benchmarks for the per-step pipeline: constraint assembly, the QP
solve (cold and warm started), and the linear scaling of the robust-margin
pass in the disturbance vertex count."""

import sys
import time
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from robustcbf import (  # noqa: E402
    BarrierParams,
    DisturbanceHull,
    FilterConfig,
    HullUnion,
    RobotGeometry,
    circle_init,
    filter_step,
    nominal_controller,
    output_point,
    support_min_rows,
    symmetric_box,
)
from robustcbf.barrier import assemble_constraints  # noqa: E402


def median_time(fn, reps, blocks=9):
    samples = []
    for _ in range(blocks):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        samples.append((time.perf_counter() - t0) / reps)
    return float(np.median(samples))


def main() -> int:
    geom = RobotGeometry(0.016, 0.105, 0.03, 0.12)
    params = BarrierParams(0.12, 150.0)
    union = HullUnion((symmetric_box(5.0),))
    states = circle_init(22, 0.6, geom, params)
    goals = [-output_point(s, geom) for s in states]
    nominal = [nominal_controller(s, g, 1.0, geom, 25.0) for s, g in zip(states, goals)]
    cfg = FilterConfig(geom, params, union, 25.0, fallback="error")

    assemble = median_time(
        lambda: assemble_constraints(states, geom, params, union, 25.0), reps=50
    )
    print(f"assemble_constraints (22 robots, 231 rows): {assemble*1e3:.3f} ms")

    cold = median_time(lambda: filter_step(states, nominal, cfg), reps=5)
    print(f"filter_step cold:                           {cold*1e3:.3f} ms")

    warm_ref = filter_step(states, nominal, cfg)
    warm = median_time(
        lambda: filter_step(states, nominal, cfg, warm_start=warm_ref.solver), reps=20
    )
    print(f"filter_step warm started:                   {warm*1e3:.3f} ms")

    stack = assemble_constraints(states, geom, params, union, 25.0)
    directions = np.empty((stack.rows, 2))
    for row in range(stack.rows):
        i, j = stack.pairs[row]
        directions[row] = (
            stack.A[row, 2 * i : 2 * i + 2] + stack.A[row, 2 * j : 2 * j + 2]
        )
    rng = np.random.default_rng(0)
    print("robust-margin pass scaling (231 rows):")
    for p in (4, 16, 64, 256, 1024, 4096):
        hull = DisturbanceHull(rng.normal(size=(p, 2)))
        t = median_time(lambda: support_min_rows(directions, hull), reps=max(4, 4096 // p))
        print(f"  p={p:5d}: {t*1e6:9.1f} us")
    return 0


if __name__ == "__main__":
    sys.exit(main())
