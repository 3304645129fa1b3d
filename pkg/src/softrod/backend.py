"""Kernel backend selection.

Hot numeric kernels are written once as plain loop-style functions and
compiled with numba when it is available. Set SOFTROD_BACKEND=numpy to force
the interpreted fallback (slow but dependency-free), or SOFTROD_BACKEND=numba
to fail loudly when compilation is impossible.
"""

import os

_REQUESTED = os.environ.get("SOFTROD_BACKEND", "auto").strip().lower()

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SOFTROD_BACKEND must be 'auto', 'numba' or 'numpy', got {_REQUESTED!r}"
    )
if _REQUESTED == "numba" and not NUMBA_AVAILABLE:
    raise ImportError("SOFTROD_BACKEND=numba requested but numba is not installed")

USE_NUMBA = NUMBA_AVAILABLE and _REQUESTED != "numpy"


def hot(fn):
    """Decorator for hot kernels: numba-compile or leave as plain Python."""
    if USE_NUMBA:
        return _njit(cache=True)(fn)
    return fn


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def python_impl(fn):
    """Return the uncompiled Python implementation of a kernel."""
    return getattr(fn, "py_func", fn)


def warmup() -> None:
    """Trigger JIT compilation of every kernel on a tiny problem.

    Cheap after the first ever run thanks to numba's on-disk cache. Useful
    before forking worker processes or timing anything.
    """
    from . import dynamics, geometry
    from .contact import Capsule, ContactConfig, detect

    state, rest, frames = geometry.build_rod(
        length=0.1, radius=0.005, density=1000.0, youngs_modulus=1e6,
        poisson_ratio=0.5, n_nodes=5,
    )
    cfg = dynamics.StepperConfig(dt=1e-3, max_newton_iters=1)
    clamp = dynamics.ClampSpec.cantilever(state)
    obstacles = [Capsule(point_a=(0.03, -0.1, -0.012),
                         point_b=(0.03, 0.1, -0.012), radius=0.01)]
    ccfg = ContactConfig(stiffness=1e4, delta=0.005)
    detect(state, obstacles, cutoff=1.0, rod_radius=rest.radius)
    dynamics.implicit_step(state, rest, frames, obstacles, cfg,
                           clamps=clamp, contact=ccfg)
    ecfg = dynamics.StepperConfig(dt=1e-5)
    dynamics.explicit_step(state, rest, frames, obstacles, ecfg,
                           clamps=clamp, contact=ccfg)
