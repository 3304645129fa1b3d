"""Discrete elastic rod simulator for soft manipulator control."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    FrameSet,
    RestConfig,
    RodState,
    build_rod,
    compute_tangents,
    curvature_binormals,
    material_curvatures,
    pack_dofs,
    time_parallel_transport,
    unpack_dofs,
)
