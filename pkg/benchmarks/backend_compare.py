"""Time the compiled kernels against the interpreted fallback.

Backend selection happens at import time via SOFTROD_BACKEND, so each
measurement runs in a child process with the variable set. The workload
is single-environment control steps under seeded random actions, one
unmeasured warmup step first (which also absorbs JIT compilation).

Run from the repository root:  python3 benchmarks/backend_compare.py
"""

import argparse
import os
import subprocess
import sys
import time

# fewer steps where the interpreted fallback crawls
STEPS = {
    ("numba", "implicit"): 10,
    ("numba", "explicit"): 3,
    ("numpy", "implicit"): 5,
    ("numpy", "explicit"): 1,
}
TASKS = ("follow_target", "obstacles2d_tight")


def measure(scheme: str, task: str, steps: int) -> float:
    import numpy as np

    from softrod.envs import TaskSpec, make_env

    env = make_env(TaskSpec(task=task, seed=1, scheme=scheme))
    rng = np.random.default_rng(1)
    actions = rng.uniform(-1.0, 1.0, (steps + 1, env.action_dim))
    env.step(actions[0])  # warmup
    best = float("inf")
    for k in range(steps):
        t0 = time.perf_counter()
        result = env.step(actions[k + 1])
        best = min(best, time.perf_counter() - t0)
        if result.terminated or result.truncated:
            env.reset(None)
    env.close()
    return best * 1e3


def child(scheme: str, task: str, steps: int) -> None:
    from softrod.backend import backend_name

    ms = measure(scheme, task, steps)
    print(f"RESULT {backend_name()} {scheme} {task} {ms:.3f}")


def parent() -> None:
    rows = {}
    for backend in ("numba", "numpy"):
        for scheme in ("implicit", "explicit"):
            for task in TASKS:
                steps = STEPS[(backend, scheme)]
                env = dict(os.environ, SOFTROD_BACKEND=backend)
                cmd = [sys.executable, os.path.abspath(__file__), "--child",
                       "--scheme", scheme, "--task", task,
                       "--steps", str(steps)]
                out = subprocess.run(cmd, env=env, capture_output=True,
                                     text=True, check=True).stdout
                for line in out.splitlines():
                    if line.startswith("RESULT "):
                        _, bk, sch, tsk, ms = line.split()
                        rows[(bk, sch, tsk)] = float(ms)

    header = (f"{'backend':<8} {'scheme':<9} {'task':<18} "
              f"{'ms_per_control_step':>20} {'vs_numba':>9}")
    print(header)
    print("-" * len(header))
    for scheme in ("implicit", "explicit"):
        for task in TASKS:
            base = rows[("numba", scheme, task)]
            for backend in ("numba", "numpy"):
                ms = rows[(backend, scheme, task)]
                print(f"{backend:<8} {scheme:<9} {task:<18} "
                      f"{ms:>20.3f} {ms / base:>8.1f}x")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--child", action="store_true")
    ap.add_argument("--scheme", default="implicit")
    ap.add_argument("--task", default="follow_target")
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    if args.child:
        child(args.scheme, args.task, args.steps)
    else:
        parent()


if __name__ == "__main__":
    main()
