"""Rod-obstacle collision detection and the two contact force models.

Obstacles are spheres and capsules; a sphere is stored as a capsule whose
axis endpoints coincide. The signed `gap` of a pair is the surface-to-surface
distance (centerline distance minus both radii): positive when separated,
negative when penetrating.

Two force models act on the detected pairs:

* an implicit squared softplus potential per pair,
  E = k * (softplus(K * eps) / K)^2 with eps = -gap and K = 15 / delta,
  smooth everywhere, with exact gradient and 6x6 per-edge Hessian blocks
  suitable for the banded implicit solve;
* an explicit Heaviside-gated penalty for the small-timestep baseline,
  (k * depth - normal-force balance - c * normal velocity) along the
  contact normal, active only while penetrating.

Closest points between the rod edge and the obstacle axis follow the
clamped segment-segment routine; the Hessian accounts for the motion of
the closest-point parameters except where they sit on a segment end,
where the parameter is locally constant.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import hot
from .errors import InvalidParameterError
from .geometry import RodState, dof_count

_PAR_EPS = 1e-12


@dataclass
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.center.shape != (3,):
            raise InvalidParameterError("sphere center must be a 3-vector")
        if not self.radius > 0.0:
            raise InvalidParameterError("sphere radius must be positive")


@dataclass
class Capsule:
    point_a: np.ndarray
    point_b: np.ndarray
    radius: float

    def __post_init__(self):
        self.point_a = np.asarray(self.point_a, dtype=np.float64)
        self.point_b = np.asarray(self.point_b, dtype=np.float64)
        if self.point_a.shape != (3,) or self.point_b.shape != (3,):
            raise InvalidParameterError("capsule endpoints must be 3-vectors")
        if not self.radius > 0.0:
            raise InvalidParameterError("capsule radius must be positive")
        if np.array_equal(self.point_a, self.point_b):
            raise InvalidParameterError("capsule endpoints must be distinct")


@dataclass
class ContactConfig:
    """Parameters shared by both contact models.

    stiffness is the energy scale of the implicit potential and the spring
    constant of the explicit penalty; delta sets the implicit smoothing
    width through K = 15 / delta; damping only enters the explicit model.
    """

    stiffness: float = 1.0e6
    delta: float = 0.005
    damping: float = 10.0

    def __post_init__(self):
        if not self.stiffness > 0.0:
            raise InvalidParameterError("contact stiffness must be positive")
        if not self.delta > 0.0:
            raise InvalidParameterError("contact delta must be positive")
        if self.damping < 0.0:
            raise InvalidParameterError("contact damping must be >= 0")

    @property
    def sharpness(self) -> float:
        return 15.0 / self.delta


@dataclass
class ContactPair:
    """One rod-edge/obstacle proximity record from detect.

    closest_point_params are (s, t): s along the rod edge, t along the
    obstacle axis (t = 0 for spheres), both in [0, 1]. The normal points
    from the obstacle surface toward the rod. The remaining fields carry
    the geometry the force models need; params_interior marks which of
    s, t sit strictly inside (0, 1) and therefore move with the rod.
    """

    edge_index: int
    closest_point_params: tuple[float, float]
    gap: float
    normal: np.ndarray
    edge_vec: np.ndarray = field(repr=False, default=None)
    axis_vec: np.ndarray = field(repr=False, default=None)
    center_dist: float = field(repr=False, default=0.0)
    params_interior: tuple[bool, bool] = field(repr=False, default=(False, False))


def pack_obstacles(obstacles) -> np.ndarray:
    """Encode obstacles as one (M, 7) array: axis endpoints and radius."""
    packed = np.empty((len(obstacles), 7))
    for m, obs in enumerate(obstacles):
        if isinstance(obs, Sphere):
            packed[m, 0:3] = obs.center
            packed[m, 3:6] = obs.center
        elif isinstance(obs, Capsule):
            packed[m, 0:3] = obs.point_a
            packed[m, 3:6] = obs.point_b
        else:
            raise InvalidParameterError(f"unknown obstacle type {type(obs)!r}")
        packed[m, 6] = obs.radius
    return packed


# ---------------------------------------------------------------------------
# kernels


@hot
def _segment_closest(p1x, p1y, p1z, ex, ey, ez, b1x, b1y, b1z, wx, wy, wz):
    """Closest parameters (s, t) between segments p1+s*e and b1+t*w."""
    a = ex * ex + ey * ey + ez * ez
    c = wx * wx + wy * wy + wz * wz
    rx = p1x - b1x
    ry = p1y - b1y
    rz = p1z - b1z
    f = wx * rx + wy * ry + wz * rz
    if a <= _PAR_EPS and c <= _PAR_EPS:
        return 0.0, 0.0
    if a <= _PAR_EPS:
        t = f / c
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        return 0.0, t
    cd = ex * rx + ey * ry + ez * rz
    if c <= _PAR_EPS:
        s = -cd / a
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
        return s, 0.0
    b = ex * wx + ey * wy + ez * wz
    denom = a * c - b * b
    if denom > _PAR_EPS * a * c:
        s = (b * f - cd * c) / denom
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    else:
        s = 0.0
    t = (b * s + f) / c
    if t < 0.0:
        t = 0.0
        s = -cd / a
    elif t > 1.0:
        t = 1.0
        s = (b - cd) / a
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    return s, t


@hot
def _detect_kernel(positions, obstacles, rod_radius, cutoff):
    """All edge/obstacle pairs with surface gap below cutoff.

    Broad phase: axis-aligned boxes inflated by both radii plus cutoff.
    Returns parallel arrays sized for the worst case with a fill count.
    """
    n_edges = positions.shape[0] - 1
    n_obs = obstacles.shape[0]
    cap = n_edges * n_obs
    edges = np.empty(cap, dtype=np.int64)
    params = np.empty((cap, 2))
    gaps = np.empty(cap)
    normals = np.empty((cap, 3))
    evecs = np.empty((cap, 3))
    wvecs = np.empty((cap, 3))
    dists = np.empty(cap)
    interior = np.empty((cap, 2), dtype=np.bool_)
    count = 0
    for j in range(n_edges):
        p1x = positions[j, 0]
        p1y = positions[j, 1]
        p1z = positions[j, 2]
        p2x = positions[j + 1, 0]
        p2y = positions[j + 1, 1]
        p2z = positions[j + 1, 2]
        for m in range(n_obs):
            reach = rod_radius + obstacles[m, 6] + cutoff
            # broad phase: inflated boxes must overlap on every axis
            lo = min(p1x, p2x) - reach
            hi = max(p1x, p2x) + reach
            if max(obstacles[m, 0], obstacles[m, 3]) < lo or \
                    min(obstacles[m, 0], obstacles[m, 3]) > hi:
                continue
            lo = min(p1y, p2y) - reach
            hi = max(p1y, p2y) + reach
            if max(obstacles[m, 1], obstacles[m, 4]) < lo or \
                    min(obstacles[m, 1], obstacles[m, 4]) > hi:
                continue
            lo = min(p1z, p2z) - reach
            hi = max(p1z, p2z) + reach
            if max(obstacles[m, 2], obstacles[m, 5]) < lo or \
                    min(obstacles[m, 2], obstacles[m, 5]) > hi:
                continue
            ex = p2x - p1x
            ey = p2y - p1y
            ez = p2z - p1z
            wx = obstacles[m, 3] - obstacles[m, 0]
            wy = obstacles[m, 4] - obstacles[m, 1]
            wz = obstacles[m, 5] - obstacles[m, 2]
            s, t = _segment_closest(p1x, p1y, p1z, ex, ey, ez,
                                    obstacles[m, 0], obstacles[m, 1],
                                    obstacles[m, 2], wx, wy, wz)
            dx = p1x + s * ex - (obstacles[m, 0] + t * wx)
            dy = p1y + s * ey - (obstacles[m, 1] + t * wy)
            dz = p1z + s * ez - (obstacles[m, 2] + t * wz)
            dist = (dx * dx + dy * dy + dz * dz) ** 0.5
            gap = dist - rod_radius - obstacles[m, 6]
            if gap >= cutoff:
                continue
            edges[count] = j
            params[count, 0] = s
            params[count, 1] = t
            gaps[count] = gap
            if dist > 1e-12:
                normals[count, 0] = dx / dist
                normals[count, 1] = dy / dist
                normals[count, 2] = dz / dist
            else:
                normals[count, 0] = 0.0
                normals[count, 1] = 0.0
                normals[count, 2] = 1.0
            evecs[count, 0] = ex
            evecs[count, 1] = ey
            evecs[count, 2] = ez
            wvecs[count, 0] = wx
            wvecs[count, 1] = wy
            wvecs[count, 2] = wz
            dists[count] = dist
            interior[count, 0] = 0.0 < s < 1.0
            interior[count, 1] = 0.0 < t < 1.0
            count += 1
    return (count, edges, params, gaps, normals, evecs, wvecs, dists,
            interior)


@hot
def _softplus(x):
    if x > 30.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@hot
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    z = np.exp(x)
    return z / (1.0 + z)


@hot
def _d3(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@hot
def _imc_kernel(count, edges, params, gaps, normals, evecs, wvecs, dists,
                interior, stiffness, sharpness, grad, blocks):
    """Implicit contact energy, gradient, per-pair 6x6 Hessian blocks."""
    energy = 0.0
    g1 = np.empty(6)
    g2 = np.empty(6)
    grad_s = np.empty(6)
    grad_t = np.empty(6)
    gd = np.empty(6)
    dmat = np.empty((3, 6))
    pd = np.empty((3, 6))
    for p in range(count):
        eps = -gaps[p]
        x = sharpness * eps
        phi = _softplus(x) / sharpness
        sig = _sigmoid(x)
        energy += stiffness * phi * phi
        de = -2.0 * stiffness * phi * sig
        d2e = 2.0 * stiffness * (sig * sig
                                 + phi * sharpness * sig * (1.0 - sig))
        s = params[p, 0]
        t = params[p, 1]
        u = normals[p]
        e = evecs[p]
        w = wvecs[p]
        dist = dists[p]
        if dist < 1e-12:
            dist = 1e-12
        base = 4 * edges[p]
        # gradient of the distance: barycentric normal on the two nodes
        for k in range(3):
            gd[k] = (1.0 - s) * u[k]
            gd[3 + k] = s * u[k]
            grad[base + k] += de * gd[k]
            grad[base + 4 + k] += de * gd[3 + k]

        # parameter sensitivities (zero when clamped at a segment end)
        a = _d3(e, e)
        b = _d3(w, e)
        c = _d3(w, w)
        s_ok = interior[p, 0]
        t_ok = interior[p, 1]
        det = a * c - b * b
        if s_ok and t_ok and det <= _PAR_EPS * a * c:
            t_ok = False
        # stationarity residual gradients at fixed (s, t):
        # g1 = d(e . delta), g2 = d(-w . delta), delta = dist * u
        for k in range(3):
            dk = dist * u[k]
            g1[k] = -dk + (1.0 - s) * e[k]
            g1[3 + k] = dk + s * e[k]
            g2[k] = -(1.0 - s) * w[k]
            g2[3 + k] = -s * w[k]
        for k in range(6):
            grad_s[k] = 0.0
            grad_t[k] = 0.0
        if s_ok and t_ok:
            inv = 1.0 / det
            for k in range(6):
                grad_s[k] = -(c * g1[k] + b * g2[k]) * inv
                grad_t[k] = -(b * g1[k] + a * g2[k]) * inv
        elif s_ok:
            for k in range(6):
                grad_s[k] = -g1[k] / a
        elif t_ok:
            for k in range(6):
                grad_t[k] = -g2[k] / c
        # dmat = d(delta)/dz with moving parameters
        for k in range(3):
            for q in range(6):
                dmat[k, q] = e[k] * grad_s[q] - w[k] * grad_t[q]
            dmat[k, k] += 1.0 - s
            dmat[k, 3 + k] += s
        # project out the normal and weight by 1/dist
        for q in range(6):
            un = u[0] * dmat[0, q] + u[1] * dmat[1, q] + u[2] * dmat[2, q]
            for k in range(3):
                pd[k, q] = (dmat[k, q] - u[k] * un) / dist
        block = blocks[p]
        for r in range(6):
            sr = grad_s[r]
            ur = -u[r] if r < 3 else u[r - 3]
            for q in range(6):
                hd = (dmat[0, r] * pd[0, q] + dmat[1, r] * pd[1, q]
                      + dmat[2, r] * pd[2, q])
                uq = -u[q] if q < 3 else u[q - 3]
                hd += ur * grad_s[q] + sr * uq
                block[r, q] = d2e * gd[r] * gd[q] + de * hd
    return energy


@hot
def _penalty_kernel(count, edges, params, gaps, normals, velocities,
                    other_forces, stiffness, damping, force):
    """Explicit Heaviside-gated penalty, scattered onto node forces."""
    for p in range(count):
        depth = -gaps[p]
        if depth <= 0.0:
            continue
        j = edges[p]
        s = params[p, 0]
        u = normals[p]
        vn = 0.0
        fn = 0.0
        for k in range(3):
            vp = (1.0 - s) * velocities[j, k] + s * velocities[j + 1, k]
            fp = (1.0 - s) * other_forces[j, k] + s * other_forces[j + 1, k]
            vn += u[k] * vp
            fn += u[k] * fp
        mag = stiffness * depth - damping * vn
        if fn < 0.0:
            mag -= fn
        base = 4 * j
        for k in range(3):
            force[base + k] += (1.0 - s) * mag * u[k]
            force[base + 4 + k] += s * mag * u[k]


# ---------------------------------------------------------------------------
# public API


def detect(state: RodState, obstacles, cutoff: float,
           rod_radius: float) -> list[ContactPair]:
    """Every edge/obstacle pair whose surface gap is below cutoff."""
    packed = obstacles if isinstance(obstacles, np.ndarray) \
        else pack_obstacles(obstacles)
    (count, edges, params, gaps, normals, evecs, wvecs, dists,
     interior) = _detect_kernel(state.positions, packed, rod_radius, cutoff)
    pairs = []
    for p in range(count):
        pairs.append(ContactPair(
            edge_index=int(edges[p]),
            closest_point_params=(float(params[p, 0]), float(params[p, 1])),
            gap=float(gaps[p]),
            normal=normals[p].copy(),
            edge_vec=evecs[p].copy(),
            axis_vec=wvecs[p].copy(),
            center_dist=float(dists[p]),
            params_interior=(bool(interior[p, 0]), bool(interior[p, 1])),
        ))
    return pairs


def _pairs_to_arrays(pairs):
    count = len(pairs)
    edges = np.empty(count, dtype=np.int64)
    params = np.empty((count, 2))
    gaps = np.empty(count)
    normals = np.empty((count, 3))
    evecs = np.empty((count, 3))
    wvecs = np.empty((count, 3))
    dists = np.empty(count)
    interior = np.empty((count, 2), dtype=np.bool_)
    for p, pair in enumerate(pairs):
        edges[p] = pair.edge_index
        params[p] = pair.closest_point_params
        gaps[p] = pair.gap
        normals[p] = pair.normal
        evecs[p] = pair.edge_vec
        wvecs[p] = pair.axis_vec
        dists[p] = pair.center_dist
        interior[p] = pair.params_interior
    return count, edges, params, gaps, normals, evecs, wvecs, dists, interior


def detect_arrays(positions: np.ndarray, packed: np.ndarray,
                  rod_radius: float, cutoff: float):
    """Raw detection tuple for hot loops; detect() is the object view.

    Layout: (count, edges, params, gaps, normals, edge_vecs, axis_vecs,
    center_dists, params_interior), each array capacity-sized with the
    first count rows valid.
    """
    return _detect_kernel(positions, packed, rod_radius, cutoff)


def imc_from_arrays(raw, config: ContactConfig, n_nodes: int):
    """Array-path twin of imc_force, fed by detect_arrays output."""
    count = raw[0]
    grad = np.zeros(dof_count(n_nodes))
    blocks = np.zeros((count, 6, 6))
    energy = _imc_kernel(*raw, config.stiffness, config.sharpness,
                         grad, blocks)
    return energy, grad, blocks, 4 * raw[1][:count]


def penalty_from_arrays(raw, config: ContactConfig, velocities: np.ndarray,
                        other_forces: np.ndarray) -> np.ndarray:
    """Array-path twin of penalty_force, fed by detect_arrays output."""
    force = np.zeros(dof_count(velocities.shape[0]))
    _penalty_kernel(raw[0], raw[1], raw[2], raw[3], raw[4], velocities,
                    other_forces, config.stiffness, config.damping, force)
    return force


def max_penetration(positions: np.ndarray, packed: np.ndarray,
                    rod_radius: float) -> float:
    """Deepest current surface penetration, 0.0 when nothing touches."""
    raw = _detect_kernel(positions, packed, rod_radius, 0.0)
    count, gaps = raw[0], raw[3]
    if count == 0:
        return 0.0
    return float(max(0.0, -gaps[:count].min()))


def imc_force(pairs, config: ContactConfig, n_nodes: int):
    """Implicit contact energy, DOF gradient, and stencil Hessian blocks.

    Returns (energy, gradient, blocks, starts): gradient over all 4N-1
    DOF (theta entries zero), one 6x6 position block per pair, and the
    first DOF of each block for band scattering. The force on the rod is
    the negative gradient.
    """
    return imc_from_arrays(_pairs_to_arrays(pairs), config, n_nodes)


def penalty_force(pairs, config: ContactConfig, velocities: np.ndarray,
                  other_forces: np.ndarray | None = None) -> np.ndarray:
    """Explicit penalty force vector over the DOF layout (theta rows zero).

    other_forces (per node, 3-vectors) feeds the normal-force balance:
    any component pressing the rod into a contact surface is cancelled
    while that contact penetrates.
    """
    if other_forces is None:
        other_forces = np.zeros((velocities.shape[0], 3))
    return penalty_from_arrays(_pairs_to_arrays(pairs), config, velocities,
                               other_forces)
