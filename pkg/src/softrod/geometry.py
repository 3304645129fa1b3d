"""Rod discretization, frames, and curvature measures.

A rod with N nodes carries N-1 edges. Each edge owns an orthonormal frame
{d1, d2, t}: the reference directors d1, d2 evolve by time-parallel
transport (the minimal rotation taking the old tangent to the new one) and
the material directors m1, m2 are the reference pair rotated by the edge's
twist angle theta. Degrees of freedom interleave as
[x0 y0 z0 th0 x1 y1 z1 th1 ... th_{N-2} x_{N-1} y_{N-1} z_{N-1}],
so node i occupies DOFs 4i..4i+2 and theta^i sits at DOF 4i+3, for a total
of 4N-1.
"""

from dataclasses import dataclass
from math import pi

import numpy as np

from .backend import hot
from .errors import (
    AntiparallelTangentError,
    DegenerateEdgeError,
    InvalidParameterError,
)

NODE_STRIDE = 4
_EDGE_EPS = 1e-12


def dof_count(n_nodes: int) -> int:
    return 4 * n_nodes - 1


@dataclass
class RodState:
    """Dynamic state: node positions, edge twist angles, and their rates."""

    positions: np.ndarray    # (N, 3)
    thetas: np.ndarray       # (N-1,)
    velocities: np.ndarray   # (N, 3)
    theta_rates: np.ndarray  # (N-1,)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "RodState":
        return RodState(self.positions.copy(), self.thetas.copy(),
                        self.velocities.copy(), self.theta_rates.copy())


@dataclass
class RestConfig:
    """Rest geometry, stiffnesses, and the current natural shape targets.

    kappa_bar / psi_bar are the natural (integrated) curvature and twist the
    elastic energy is measured against; actuation rewrites them over time.
    """

    rest_lengths: np.ndarray      # (N-1,)
    voronoi_lengths: np.ndarray   # (N-2,) per interior node
    kappa_bar: np.ndarray         # (N-2, 2)
    psi_bar: np.ndarray           # (N-2,)
    stretch_stiffness: float      # E * A
    bend_stiffness: float         # E * I
    twist_stiffness: float        # G * J
    node_masses: np.ndarray       # (N,)
    theta_inertias: np.ndarray    # (N-1,)
    length: float
    radius: float
    density: float
    youngs_modulus: float
    poisson_ratio: float

    @property
    def n_nodes(self) -> int:
        return self.rest_lengths.shape[0] + 1

    def copy(self) -> "RestConfig":
        return RestConfig(
            self.rest_lengths.copy(), self.voronoi_lengths.copy(),
            self.kappa_bar.copy(), self.psi_bar.copy(),
            self.stretch_stiffness, self.bend_stiffness, self.twist_stiffness,
            self.node_masses.copy(), self.theta_inertias.copy(),
            self.length, self.radius, self.density, self.youngs_modulus,
            self.poisson_ratio,
        )


@dataclass
class FrameSet:
    """Per-edge orthonormal frames plus the per-node reference twist."""

    tangents: np.ndarray   # (N-1, 3)
    d1: np.ndarray         # (N-1, 3) reference director 1
    d2: np.ndarray         # (N-1, 3) reference director 2
    m1: np.ndarray         # (N-1, 3) material director 1
    m2: np.ndarray         # (N-1, 3) material director 2
    ref_twist: np.ndarray  # (N-2,) accumulated reference twist per interior node

    def copy(self) -> "FrameSet":
        return FrameSet(self.tangents.copy(), self.d1.copy(), self.d2.copy(),
                        self.m1.copy(), self.m2.copy(), self.ref_twist.copy())


# ---------------------------------------------------------------------------
# kernels


@hot
def _tangents_kernel(positions, out):
    n_edges = positions.shape[0] - 1
    for i in range(n_edges):
        ex = positions[i + 1, 0] - positions[i, 0]
        ey = positions[i + 1, 1] - positions[i, 1]
        ez = positions[i + 1, 2] - positions[i, 2]
        norm = (ex * ex + ey * ey + ez * ez) ** 0.5
        if norm < _EDGE_EPS:
            return i + 1
        out[i, 0] = ex / norm
        out[i, 1] = ey / norm
        out[i, 2] = ez / norm
    return 0


@hot
def _transport_vector(vx, vy, vz, t0, t1):
    """Rotate (vx,vy,vz) by the minimal rotation taking unit t0 to unit t1.

    Returns (status, x, y, z); status 1 flags an (anti)parallel degeneracy
    where the rotation axis is undefined.
    """
    bx = t0[1] * t1[2] - t0[2] * t1[1]
    by = t0[2] * t1[0] - t0[0] * t1[2]
    bz = t0[0] * t1[1] - t0[1] * t1[0]
    c = t0[0] * t1[0] + t0[1] * t1[1] + t0[2] * t1[2]
    b2 = bx * bx + by * by + bz * bz
    if b2 < 1e-28:
        if c > 0.0:
            return 0, vx, vy, vz
        return 1, vx, vy, vz
    if 1.0 + c < 1e-12:
        return 1, vx, vy, vz
    # R v = c v + b x v + (b . v) b / (1 + c)
    bv = bx * vx + by * vy + bz * vz
    cx = by * vz - bz * vy
    cy = bz * vx - bx * vz
    cz = bx * vy - by * vx
    s = bv / (1.0 + c)
    return 0, c * vx + cx + s * bx, c * vy + cy + s * by, c * vz + cz + s * bz


@hot
def _space_frames_kernel(tangents, d1, d2):
    """Fill d1/d2 by parallel transporting d1[0] along the centerline."""
    n_edges = tangents.shape[0]
    for i in range(1, n_edges):
        status, vx, vy, vz = _transport_vector(
            d1[i - 1, 0], d1[i - 1, 1], d1[i - 1, 2],
            tangents[i - 1], tangents[i])
        if status != 0:
            return i + 1
        # re-orthonormalize against the tangent to stop drift
        t = tangents[i]
        dt = vx * t[0] + vy * t[1] + vz * t[2]
        vx -= dt * t[0]
        vy -= dt * t[1]
        vz -= dt * t[2]
        norm = (vx * vx + vy * vy + vz * vz) ** 0.5
        d1[i, 0] = vx / norm
        d1[i, 1] = vy / norm
        d1[i, 2] = vz / norm
        d2[i, 0] = t[1] * d1[i, 2] - t[2] * d1[i, 1]
        d2[i, 1] = t[2] * d1[i, 0] - t[0] * d1[i, 2]
        d2[i, 2] = t[0] * d1[i, 1] - t[1] * d1[i, 0]
    return 0


@hot
def _time_transport_kernel(old_tangents, old_d1, new_tangents, d1, d2):
    """Per-edge minimal rotation of the reference frame to the new tangent."""
    n_edges = new_tangents.shape[0]
    for i in range(n_edges):
        status, vx, vy, vz = _transport_vector(
            old_d1[i, 0], old_d1[i, 1], old_d1[i, 2],
            old_tangents[i], new_tangents[i])
        if status != 0:
            return i + 1
        t = new_tangents[i]
        dt = vx * t[0] + vy * t[1] + vz * t[2]
        vx -= dt * t[0]
        vy -= dt * t[1]
        vz -= dt * t[2]
        norm = (vx * vx + vy * vy + vz * vz) ** 0.5
        d1[i, 0] = vx / norm
        d1[i, 1] = vy / norm
        d1[i, 2] = vz / norm
        d2[i, 0] = t[1] * d1[i, 2] - t[2] * d1[i, 1]
        d2[i, 1] = t[2] * d1[i, 0] - t[0] * d1[i, 2]
        d2[i, 2] = t[0] * d1[i, 1] - t[1] * d1[i, 0]
    return 0


@hot
def _ref_twist_kernel(tangents, d1, prev_twist, out):
    """Accumulated reference twist per interior node.

    Space-transports d1 of the inboard edge onto the outboard edge, pre-rotates
    it by the previous twist value, and adds the leftover signed angle. The
    increment lives in (-pi, pi], which keeps the accumulated angle continuous
    across steps instead of wrapping.
    """
    n_edges = tangents.shape[0]
    for i in range(1, n_edges):
        t0 = tangents[i - 1]
        t1 = tangents[i]
        status, ux, uy, uz = _transport_vector(
            d1[i - 1, 0], d1[i - 1, 1], d1[i - 1, 2], t0, t1)
        if status != 0:
            return i + 1
        beta = prev_twist[i - 1]
        # rotate u about t1 by beta (Rodrigues, unit axis)
        cb = np.cos(beta)
        sb = np.sin(beta)
        tx, ty, tz = t1[0], t1[1], t1[2]
        tu = tx * ux + ty * uy + tz * uz
        rx = cb * ux + sb * (ty * uz - tz * uy) + (1.0 - cb) * tu * tx
        ry = cb * uy + sb * (tz * ux - tx * uz) + (1.0 - cb) * tu * ty
        rz = cb * uz + sb * (tx * uy - ty * ux) + (1.0 - cb) * tu * tz
        # signed angle from r to d1[i] about t1
        ax = d1[i, 0]
        ay = d1[i, 1]
        az = d1[i, 2]
        crx = ry * az - rz * ay
        cry = rz * ax - rx * az
        crz = rx * ay - ry * ax
        sin_a = crx * tx + cry * ty + crz * tz
        cos_a = rx * ax + ry * ay + rz * az
        out[i - 1] = beta + np.arctan2(sin_a, cos_a)
    return 0


@hot
def _material_frames_kernel(d1, d2, thetas, m1, m2):
    n_edges = d1.shape[0]
    for i in range(n_edges):
        c = np.cos(thetas[i])
        s = np.sin(thetas[i])
        for k in range(3):
            m1[i, k] = c * d1[i, k] + s * d2[i, k]
            m2[i, k] = -s * d1[i, k] + c * d2[i, k]


@hot
def _binormal_kernel(tangents, out):
    """Curvature binormal per interior node: 2 (t_prev x t_next) / (1 + t.t)."""
    n_edges = tangents.shape[0]
    for i in range(1, n_edges):
        t0 = tangents[i - 1]
        t1 = tangents[i]
        denom = 1.0 + t0[0] * t1[0] + t0[1] * t1[1] + t0[2] * t1[2]
        if denom < 1e-12:
            return i
        out[i - 1, 0] = 2.0 * (t0[1] * t1[2] - t0[2] * t1[1]) / denom
        out[i - 1, 1] = 2.0 * (t0[2] * t1[0] - t0[0] * t1[2]) / denom
        out[i - 1, 2] = 2.0 * (t0[0] * t1[1] - t0[1] * t1[0]) / denom
    return 0


@hot
def _curvature_kernel(tangents, m1, m2, kb_scratch, out):
    """Material curvature components per interior node.

    kappa1 projects the curvature binormal onto the average of the adjacent
    m2 directors, kappa2 onto the average of the adjacent m1 directors.
    """
    status = _binormal_kernel(tangents, kb_scratch)
    if status != 0:
        return status
    n_int = kb_scratch.shape[0]
    for i in range(n_int):
        kb = kb_scratch[i]
        out[i, 0] = 0.5 * (
            kb[0] * (m2[i, 0] + m2[i + 1, 0])
            + kb[1] * (m2[i, 1] + m2[i + 1, 1])
            + kb[2] * (m2[i, 2] + m2[i + 1, 2]))
        out[i, 1] = 0.5 * (
            kb[0] * (m1[i, 0] + m1[i + 1, 0])
            + kb[1] * (m1[i, 1] + m1[i + 1, 1])
            + kb[2] * (m1[i, 2] + m1[i + 1, 2]))
    return 0


# ---------------------------------------------------------------------------
# public API


def compute_tangents(positions: np.ndarray) -> np.ndarray:
    """Unit edge tangents, (N-1, 3). Raises on a collapsed edge."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    out = np.empty((positions.shape[0] - 1, 3))
    status = _tangents_kernel(positions, out)
    if status != 0:
        raise DegenerateEdgeError(status - 1)
    return out


def _first_director(t0: np.ndarray) -> np.ndarray:
    v = np.cross(t0, np.array([0.0, 1.0, 0.0]))
    if np.linalg.norm(v) < 1e-6:
        v = np.cross(t0, np.array([0.0, 0.0, 1.0]))
    v -= (v @ t0) * t0
    return v / np.linalg.norm(v)


def init_frames(positions: np.ndarray, thetas: np.ndarray) -> FrameSet:
    """Space-parallel reference frames for a fresh rod; reference twist = 0."""
    tangents = compute_tangents(positions)
    n_edges = tangents.shape[0]
    d1 = np.empty((n_edges, 3))
    d2 = np.empty((n_edges, 3))
    d1[0] = _first_director(tangents[0])
    d2[0] = np.cross(tangents[0], d1[0])
    status = _space_frames_kernel(tangents, d1, d2)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    m1 = np.empty_like(d1)
    m2 = np.empty_like(d2)
    _material_frames_kernel(d1, d2, np.ascontiguousarray(thetas, dtype=np.float64),
                            m1, m2)
    ref_twist = np.zeros(n_edges - 1)
    status = _ref_twist_kernel(tangents, d1, np.zeros(n_edges - 1), ref_twist)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    return FrameSet(tangents, d1, d2, m1, m2, ref_twist)


def time_parallel_transport(prev: FrameSet, new_tangents: np.ndarray,
                            thetas: np.ndarray) -> FrameSet:
    """Evolve reference frames to new tangents and re-measure twist.

    Each edge's reference frame rotates by the minimal rotation taking its
    old tangent to its new one; the accumulated reference twist is updated
    history-consistently and the material frames are rebuilt from thetas.
    """
    new_tangents = np.ascontiguousarray(new_tangents, dtype=np.float64)
    n_edges = new_tangents.shape[0]
    d1 = np.empty((n_edges, 3))
    d2 = np.empty((n_edges, 3))
    status = _time_transport_kernel(prev.tangents, prev.d1, new_tangents, d1, d2)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    ref_twist = np.empty(n_edges - 1)
    status = _ref_twist_kernel(new_tangents, d1, prev.ref_twist, ref_twist)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    m1 = np.empty_like(d1)
    m2 = np.empty_like(d2)
    _material_frames_kernel(d1, d2, np.ascontiguousarray(thetas, dtype=np.float64),
                            m1, m2)
    return FrameSet(new_tangents, d1, d2, m1, m2, ref_twist)


def curvature_binormals(tangents: np.ndarray) -> np.ndarray:
    """Discrete curvature binormal at each interior node, (N-2, 3)."""
    tangents = np.ascontiguousarray(tangents, dtype=np.float64)
    out = np.empty((tangents.shape[0] - 1, 3))
    status = _binormal_kernel(tangents, out)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    return out


def material_curvatures(state: RodState, frames: FrameSet) -> np.ndarray:
    """Integrated material curvature (kappa1, kappa2) per interior node."""
    n_int = state.n_nodes - 2
    scratch = np.empty((n_int, 3))
    out = np.empty((n_int, 2))
    status = _curvature_kernel(frames.tangents, frames.m1, frames.m2,
                               scratch, out)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    return out


def pack_dofs(positions: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    """Interleave node positions and twist angles into one DOF vector."""
    n = positions.shape[0]
    q = np.empty(dof_count(n))
    head = q[: 4 * (n - 1)].reshape(n - 1, 4)
    head[:, :3] = positions[:-1]
    head[:, 3] = thetas
    q[-3:] = positions[-1]
    return q


def unpack_dofs(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of pack_dofs."""
    n = (q.shape[0] + 1) // 4
    positions = np.empty((n, 3))
    head = q[: 4 * (n - 1)].reshape(n - 1, 4)
    positions[:-1] = head[:, :3]
    positions[-1] = q[-3:]
    return positions, head[:, 3].copy()


def build_rod(length: float, radius: float, density: float,
              youngs_modulus: float, poisson_ratio: float, n_nodes: int,
              start=(0.0, 0.0, 0.0), direction=(1.0, 0.0, 0.0),
              ) -> tuple[RodState, RestConfig, FrameSet]:
    """Construct a straight rod with uniform edge lengths.

    Stiffnesses follow a solid circular cross-section: stretching E*A,
    bending E*I, twisting G*J with G = E / (2 (1 + nu)). Node masses lump
    half of each adjacent edge; twist inertia per edge is rho * J * rest
    length.
    """
    if n_nodes < 3:
        raise InvalidParameterError(f"need at least 3 nodes, got {n_nodes}")
    for name, value in (("length", length), ("radius", radius),
                        ("density", density),
                        ("youngs_modulus", youngs_modulus)):
        if not value > 0.0:
            raise InvalidParameterError(f"{name} must be positive, got {value}")
    if not 0.0 <= poisson_ratio <= 0.5 + 1e-9:
        raise InvalidParameterError(
            f"poisson_ratio must lie in [0, 0.5], got {poisson_ratio}")

    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    s = np.linspace(0.0, length, n_nodes)
    positions = np.asarray(start, dtype=np.float64)[None, :] + s[:, None] * direction

    area = pi * radius ** 2
    second_moment = pi * radius ** 4 / 4.0
    polar_moment = pi * radius ** 4 / 2.0
    shear_modulus = youngs_modulus / (2.0 * (1.0 + poisson_ratio))

    edges = positions[1:] - positions[:-1]
    rest_lengths = np.linalg.norm(edges, axis=1)
    voronoi = 0.5 * (rest_lengths[:-1] + rest_lengths[1:])

    node_masses = np.zeros(n_nodes)
    node_masses[:-1] += 0.5 * density * area * rest_lengths
    node_masses[1:] += 0.5 * density * area * rest_lengths
    theta_inertias = density * polar_moment * rest_lengths

    state = RodState(
        positions=positions,
        thetas=np.zeros(n_nodes - 1),
        velocities=np.zeros((n_nodes, 3)),
        theta_rates=np.zeros(n_nodes - 1),
    )
    rest = RestConfig(
        rest_lengths=rest_lengths,
        voronoi_lengths=voronoi,
        kappa_bar=np.zeros((n_nodes - 2, 2)),
        psi_bar=np.zeros(n_nodes - 2),
        stretch_stiffness=youngs_modulus * area,
        bend_stiffness=youngs_modulus * second_moment,
        twist_stiffness=shear_modulus * polar_moment,
        node_masses=node_masses,
        theta_inertias=theta_inertias,
        length=length,
        radius=radius,
        density=density,
        youngs_modulus=youngs_modulus,
        poisson_ratio=poisson_ratio,
    )
    frames = init_frames(positions, state.thetas)
    return state, rest, frames
