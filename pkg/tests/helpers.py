"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the code paths they check: finite
differences run on energies only, the segment distance oracle is a dense
parameter-grid search, and mass/stiffness expectations are recomputed
from first principles inside each test.
"""

import numpy as np

from softrod import elasticity, geometry


def perturbed_rod(rng, n_nodes=21, pos_noise=0.01, theta_noise=0.3,
                  kappa_scale=0.5, psi_scale=0.1, **rod_kwargs):
    """A randomly bent, twisted rod with frames transported to match."""
    params = dict(length=1.0, radius=0.05, density=1000.0,
                  youngs_modulus=1e7, poisson_ratio=0.5)
    params.update(rod_kwargs)
    state, rest, frames = geometry.build_rod(n_nodes=n_nodes, **params)
    state.positions[1:] += pos_noise * rng.standard_normal(
        (n_nodes - 1, 3))
    state.thetas[:] = theta_noise * rng.standard_normal(n_nodes - 1)
    rest.kappa_bar[:] = kappa_scale * rng.standard_normal((n_nodes - 2, 2))
    rest.psi_bar[:] = psi_scale * rng.standard_normal(n_nodes - 2)
    frames = geometry.time_parallel_transport(
        frames, geometry.compute_tangents(state.positions), state.thetas)
    return state, rest, frames


def state_at(q, template):
    positions, thetas = geometry.unpack_dofs(q)
    return geometry.RodState(positions, thetas,
                             np.zeros_like(positions),
                             np.zeros_like(thetas))


def family_energy(name, q, base_frames, rest):
    """Energy of one elastic term at displaced DOFs q.

    Frames are re-transported from base_frames exactly as the solver
    does, so finite differences of this function see the full coupling
    through the reference frame.
    """
    state = state_at(q, None)
    fn = getattr(elasticity, f"{name}_energy")
    if name == "stretch":
        return fn(state, rest)[0]
    frames = geometry.time_parallel_transport(
        base_frames, geometry.compute_tangents(state.positions),
        state.thetas)
    return fn(state, frames, rest)[0]


def fd_gradient(f, q, dofs=None, h=1e-7):
    """Central finite differences of scalar f over the listed DOFs."""
    if dofs is None:
        dofs = range(q.size)
    grad = np.zeros(q.size)
    for d in dofs:
        qp, qm = q.copy(), q.copy()
        qp[d] += h
        qm[d] -= h
        grad[d] = (f(qp) - f(qm)) / (2.0 * h)
    return grad


def brute_force_gap(p0, p1, a, b, r_rod, r_obs, rounds=4, grid=60):
    """Surface gap between segments by refined dense parameter sampling."""
    lo = np.array([0.0, 0.0])
    hi = np.array([1.0, 1.0])
    e = p1 - p0
    w = b - a
    for _ in range(rounds):
        s = np.linspace(lo[0], hi[0], grid)
        t = np.linspace(lo[1], hi[1], grid)
        pts_rod = p0[None, :] + s[:, None] * e[None, :]
        pts_obs = a[None, :] + t[:, None] * w[None, :]
        d2 = np.sum((pts_rod[:, None, :] - pts_obs[None, :, :]) ** 2,
                    axis=2)
        i, j = np.unravel_index(np.argmin(d2), d2.shape)
        span = (hi - lo) / (grid - 1)
        center = np.array([s[i], t[j]])
        lo = np.clip(center - span, 0.0, 1.0)
        hi = np.clip(center + span, 0.0, 1.0)
        best = np.sqrt(d2[i, j])
    return best - r_rod - r_obs


def rodrigues(axis, angle, v):
    """Rotate v about the unit axis by angle (reference formula)."""
    axis = np.asarray(axis, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    return (v * c + np.cross(axis, v) * s
            + axis * np.dot(axis, v) * (1.0 - c))


def rotation_matrix(rng):
    """A uniformly random rotation via QR of a Gaussian matrix."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def arc_positions(n_nodes, phi, edge_len=0.05):
    """Nodes on a circular arc turning phi radians per edge."""
    radius = edge_len / (2.0 * np.sin(phi / 2.0))
    angles = phi * np.arange(n_nodes)
    pts = np.stack([radius * np.sin(angles),
                    np.zeros(n_nodes),
                    radius * (1.0 - np.cos(angles))], axis=1)
    return pts
