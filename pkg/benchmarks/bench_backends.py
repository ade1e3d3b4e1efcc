"""Timing comparison between the compiled and pure-NumPy kernels.

Each backend runs in its own subprocess (the selection is made once at
import, via FUNCMEAN_BACKEND), timing the low-level kernels on a fixed
workload and one full training run.  Usage:

    python3 benchmarks/bench_backends.py [--reps 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json
import time

import numpy as np

from funcmean import Architecture, TrainConfig, build_grid, fit_targets, init_params
from funcmean._backend import BACKEND_NAME, adam_step, backward, forward, forward_hidden

def best_of(reps, fn):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)

reps = int(__import__("sys").argv[1])
rng = np.random.default_rng(7)

arch = Architecture(n_hidden=3, widths=(2, 32, 32, 32, 1))
params = init_params(arch, rng)
weights, shifts = list(params.weights), list(params.shifts)
pts = rng.uniform(0.0, 1.0, size=(256, 2))
targets = rng.normal(size=256)

small = Architecture(n_hidden=3, widths=(2, 10, 10, 10, 1))
params_s = init_params(small, rng)
weights_s, shifts_s = list(params_s.weights), list(params_s.shifts)
pts_s = rng.uniform(0.0, 1.0, size=(32, 2))
targets_s = rng.normal(size=32)

def grad_cycle(p, w, s, t):
    y, hiddens = forward_hidden(p, w, s)
    return backward(p, w, s, hiddens, y - t)

results = {"backend": BACKEND_NAME}
results["forward_32x10_x1000"] = best_of(
    reps, lambda: [forward(pts_s, weights_s, shifts_s) for _ in range(1000)]
)
results["gradient_32x10_x1000"] = best_of(
    reps, lambda: [grad_cycle(pts_s, weights_s, shifts_s, targets_s) for _ in range(1000)]
)
results["forward_256x32_x100"] = best_of(
    reps, lambda: [forward(pts, weights, shifts) for _ in range(100)]
)
results["gradient_256x32_x100"] = best_of(
    reps, lambda: [grad_cycle(pts, weights, shifts, targets) for _ in range(100)]
)

arrays = params.all_arrays()
m_state = [np.zeros_like(a) for a in arrays]
v_state = [np.zeros_like(a) for a in arrays]
d_w, d_s = grad_cycle(pts, weights, shifts, targets)
grads = list(d_w) + list(d_s)
results["adam_step_x100"] = best_of(
    reps,
    lambda: [
        adam_step(arrays, grads, m_state, v_state, t, 1e-3, 0.9, 0.999, 1e-8)
        for t in range(1, 101)
    ],
)

grid = build_grid((25, 25))
coords = grid.coords()
truth = np.sin(2 * np.pi * coords[:, 0]) * coords[:, 1]
config = TrainConfig(epochs=50, seed=3)
results["fit_50_epochs"] = best_of(
    1, lambda: fit_targets(truth, grid, Architecture(n_hidden=2, widths=(2, 16, 16, 1)), config)
)
print(json.dumps(results))
"""


def run_backend(name: str, reps: int) -> dict:
    env = dict(os.environ, FUNCMEAN_BACKEND=name)
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(reps)],
        capture_output=True, text=True, env=env, check=True,
    )
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=5,
                        help="repetitions per kernel timing (best is kept)")
    args = parser.parse_args()

    rows = []
    for name in ("python", "cython"):
        try:
            rows.append(run_backend(name, args.reps))
        except subprocess.CalledProcessError as exc:
            print(f"backend {name!r} unavailable:\n{exc.stderr}", file=sys.stderr)

    if not rows:
        return 1

    keys = [k for k in rows[0] if k != "backend"]
    width = max(len(k) for k in keys)
    header = f"{'kernel':<{width}}" + "".join(f"  {r['backend']:>12}" for r in rows)
    if len(rows) == 2:
        header += "  speedup"
    print(header)
    print("-" * len(header))
    for key in keys:
        line = f"{key:<{width}}"
        for r in rows:
            line += f"  {r[key]:>11.4f}s"
        if len(rows) == 2 and rows[1][key] > 0:
            line += f"  {rows[0][key] / rows[1][key]:>6.1f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
