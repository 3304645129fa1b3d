"""Time integration for the rod.

Two schemes share the same energies and contact geometry:

* implicit backward Euler at large dt. Each step solves
  r(q) = M (q - q_t - dt v_t) / dt^2 + grad E_elastic(q) + grad E_contact(q)
         - F_ext + c_d M (q - q_t) / dt = 0
  by Newton with a hard iteration cap; the Jacobian is banded (half
  bandwidth 10) so each iteration is one banded LU solve. Hitting the cap
  is not an error: the under-converged step is accepted and the residual
  reported in the stats.
* explicit semi-implicit Euler at small dt with the penalty contact model,
  standing in for the classic small-timestep baseline.

Frames are time-parallel-transported from the pre-step frames to every
Newton iterate, so the analytic gradient and Hessian are exact at each
iterate; the accepted state's frames carry the twist history forward.

Clamped DOFs (ClampSpec) are held at target values and removed from the
solve by zeroing their residual rows and band rows/columns with a unit
diagonal.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dgbsv as _dgbsv

from .backend import hot
from .contact import (ContactConfig, detect_arrays, imc_from_arrays,
                      pack_obstacles, penalty_from_arrays)
from .elasticity import (BAND_ROWS, HALF_BANDWIDTH, project_psd,
                         scatter_band, total_elastic)
from .errors import (InstabilityError, InvalidParameterError,
                     SingularMatrixError, StepFailureError)
from .geometry import (FrameSet, RestConfig, RodState, compute_tangents,
                       dof_count, pack_dofs, time_parallel_transport,
                       unpack_dofs)

_CONTACT_BLOCK_OFFSETS = np.array([0, 1, 2, 4, 5, 6], dtype=np.int64)


@dataclass
class StepperConfig:
    dt: float = 0.05
    max_newton_iters: int = 2
    newton_tol: float = 1e-6
    damping_coeff: float = 0.1
    gravity: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    line_search: bool = False
    scheme: str = "implicit"

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=np.float64)
        if not self.dt > 0.0:
            raise InvalidParameterError("dt must be positive")
        if self.max_newton_iters < 1:
            raise InvalidParameterError("max_newton_iters must be >= 1")
        if not self.newton_tol > 0.0:
            raise InvalidParameterError("newton_tol must be positive")
        if self.damping_coeff < 0.0:
            raise InvalidParameterError("damping_coeff must be >= 0")
        if self.gravity.shape != (3,):
            raise InvalidParameterError("gravity must be a 3-vector")
        if self.scheme not in ("implicit", "explicit"):
            raise InvalidParameterError(
                f"scheme must be 'implicit' or 'explicit', got {self.scheme!r}")


@dataclass
class ClampSpec:
    """Boundary conditions: nodes and twist angles pinned to targets."""

    node_indices: np.ndarray
    node_targets: np.ndarray    # (len(node_indices), 3)
    theta_indices: np.ndarray
    theta_targets: np.ndarray   # (len(theta_indices),)

    def __post_init__(self):
        self.node_indices = np.asarray(self.node_indices, dtype=np.int64)
        self.node_targets = np.asarray(self.node_targets, dtype=np.float64)
        self.theta_indices = np.asarray(self.theta_indices, dtype=np.int64)
        self.theta_targets = np.asarray(self.theta_targets, dtype=np.float64)
        if self.node_targets.shape != (self.node_indices.size, 3):
            raise InvalidParameterError("node_targets shape mismatch")
        if self.theta_targets.shape != (self.theta_indices.size,):
            raise InvalidParameterError("theta_targets shape mismatch")

    @classmethod
    def cantilever(cls, state: RodState) -> "ClampSpec":
        """Clamp the base: first two nodes and the first twist angle."""
        return cls(node_indices=np.array([0, 1]),
                   node_targets=state.positions[:2].copy(),
                   theta_indices=np.array([0]),
                   theta_targets=state.thetas[:1].copy())

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Clamped DOF indices and their target values, aligned."""
        idx = np.concatenate([
            (4 * self.node_indices[:, None]
             + np.arange(3)[None, :]).ravel(),
            4 * self.theta_indices + 3,
        ]).astype(np.int64)
        vals = np.concatenate([self.node_targets.ravel(),
                               self.theta_targets])
        return idx, vals


@dataclass
class StepStats:
    iterations: int
    residual: float
    converged: bool
    contacts: int


def mass_vector(rest: RestConfig) -> np.ndarray:
    """Diagonal lumped mass over the DOF layout (translations and twist)."""
    n = rest.n_nodes
    m = np.empty(dof_count(n))
    head = m[: 4 * (n - 1)].reshape(n - 1, 4)
    head[:, :3] = rest.node_masses[:-1, None]
    head[:, 3] = rest.theta_inertias
    m[-3:] = rest.node_masses[-1]
    return m


def gravity_force(rest: RestConfig, gravity: np.ndarray) -> np.ndarray:
    """Nodal gravity load over the DOF layout (theta rows zero)."""
    n = rest.n_nodes
    f = np.zeros(dof_count(n))
    head = f[: 4 * (n - 1)].reshape(n - 1, 4)
    head[:, :3] = rest.node_masses[:-1, None] * gravity[None, :]
    f[-3:] = rest.node_masses[-1] * gravity
    return f


def solve_banded(band: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve the symmetric banded system in LAPACK band storage."""
    n = band.shape[1]
    # dgbsv wants kl extra rows above the band for the LU fill-in
    ab = np.zeros((3 * HALF_BANDWIDTH + 1, n), order="F")
    ab[HALF_BANDWIDTH:] = band
    _, _, x, info = _dgbsv(HALF_BANDWIDTH, HALF_BANDWIDTH, ab, rhs,
                           overwrite_ab=True)
    if info != 0:
        raise SingularMatrixError(f"banded solve failed (info={info})")
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("banded solve produced non-finite values")
    return x


@hot
def _clamp_band_kernel(band, u, idx):
    n = band.shape[1]
    for m in range(idx.shape[0]):
        d = idx[m]
        lo = max(0, d - u)
        hi = min(n - 1, d + u)
        for j in range(lo, hi + 1):
            band[u + d - j, j] = 0.0
            band[u + j - d, d] = 0.0
        band[u, d] = 1.0


def _clamp_band(band: np.ndarray, idx: np.ndarray) -> None:
    """Zero clamped rows/columns in band storage, unit diagonal."""
    _clamp_band_kernel(band, HALF_BANDWIDTH,
                       np.asarray(idx, dtype=np.int64))


def _assemble(q, q_t, v_t, frames_t, rest, packed_obs, contact, config,
              mass, f_ext, with_hessian):
    """Residual (and band Jacobian) of the backward-Euler equations at q."""
    dt = config.dt
    positions, thetas = unpack_dofs(q)
    tangents = compute_tangents(positions)
    frames_q = time_parallel_transport(frames_t, tangents, thetas)
    state_q = RodState(positions, thetas, np.zeros_like(positions),
                       np.zeros_like(thetas))
    res = total_elastic(state_q, frames_q, rest, with_hessian=with_hessian,
                        psd_project=True)
    grad = res.gradient
    band = res.hessian_band
    n_contacts = 0
    if packed_obs is not None:
        raw = detect_arrays(state_q.positions, packed_obs,
                            rest.radius, 2.0 * contact.delta)
        n_contacts = int(raw[0])
        if n_contacts:
            _, g_c, blocks_c, starts_c = imc_from_arrays(raw, contact,
                                                         state_q.n_nodes)
            grad = grad + g_c
            if with_hessian:
                scatter_band(band, project_psd(blocks_c), starts_c,
                             _CONTACT_BLOCK_OFFSETS)
    r = (mass * (q - q_t - dt * v_t) / dt ** 2 + grad - f_ext
         + config.damping_coeff * mass * (q - q_t) / dt)
    return r, band, n_contacts


def implicit_step(state: RodState, rest: RestConfig, frames: FrameSet,
                  obstacles, config: StepperConfig,
                  clamps: ClampSpec | None = None,
                  contact: ContactConfig | None = None):
    """One backward-Euler step solved by capped Newton on the free DOFs.

    Returns (new state, new frames, StepStats). The residual is checked
    before the first solve, so a state already in equilibrium costs zero
    iterations. Hitting max_newton_iters accepts the under-converged step.
    """
    dt = config.dt
    mass = mass_vector(rest)
    f_ext = gravity_force(rest, config.gravity)
    q_t = pack_dofs(state.positions, state.thetas)
    v_t = pack_dofs(state.velocities, state.theta_rates)
    clamp_idx, clamp_vals = (clamps.flat() if clamps is not None
                             else (np.empty(0, dtype=np.int64), np.empty(0)))
    packed_obs = None
    if obstacles is not None and len(obstacles) > 0:
        packed_obs = obstacles if isinstance(obstacles, np.ndarray) \
            else pack_obstacles(obstacles)
        if contact is None:
            contact = ContactConfig()

    diag_extra = mass / dt ** 2 + config.damping_coeff * mass / dt
    q = q_t + dt * v_t
    q[clamp_idx] = clamp_vals

    iterations = 0
    converged = False
    n_contacts = 0
    carried = None
    while True:
        # the band is useless once the iteration cap is hit, skip building it
        need_h = iterations < config.max_newton_iters
        if carried is None:
            r, band, n_contacts = _assemble(q, q_t, v_t, frames, rest,
                                            packed_obs, contact, config,
                                            mass, f_ext, with_hessian=need_h)
            r[clamp_idx] = 0.0
            if not np.all(np.isfinite(r)):
                bad = int(np.flatnonzero(~np.isfinite(r))[0])
                raise StepFailureError(
                    f"non-finite residual at DOF {bad}",
                    iterations=iterations)
        else:
            r, band, n_contacts = carried
            carried = None
        r_norm = float(np.abs(r).max())
        if r_norm < config.newton_tol:
            converged = True
            break
        if iterations >= config.max_newton_iters:
            break
        band[HALF_BANDWIDTH] += diag_extra
        _clamp_band(band, clamp_idx)
        try:
            dq = solve_banded(band, -r)
        except SingularMatrixError as exc:
            raise StepFailureError(str(exc), residual_norm=r_norm,
                                   iterations=iterations) from exc
        if config.line_search:
            # the full-step trial doubles as the next iterate's assembly
            # (gradients are identical with or without the Hessian pass),
            # so an accepted alpha=1 costs the same as plain Newton
            next_h = iterations + 1 < config.max_newton_iters
            alpha = 1.0
            for k in range(8):
                r_try, band_try, nc_try = _assemble(
                    q + alpha * dq, q_t, v_t, frames, rest, packed_obs,
                    contact, config, mass, f_ext,
                    with_hessian=next_h and k == 0)
                r_try[clamp_idx] = 0.0
                if np.all(np.isfinite(r_try)) \
                        and np.abs(r_try).max() < r_norm:
                    if k == 0 or not next_h:
                        carried = (r_try, band_try, nc_try)
                    break
                alpha *= 0.5
            q = q + alpha * dq
        else:
            q = q + dq
        q[clamp_idx] = clamp_vals
        iterations += 1

    v_new = (q - q_t) / dt
    positions, thetas = unpack_dofs(q)
    velocities, theta_rates = unpack_dofs(v_new)
    new_frames = time_parallel_transport(frames, compute_tangents(positions),
                                         thetas)
    new_state = RodState(positions, thetas, velocities, theta_rates)
    stats = StepStats(iterations=iterations, residual=r_norm,
                      converged=converged, contacts=n_contacts)
    return new_state, new_frames, stats


def explicit_step(state: RodState, rest: RestConfig, frames: FrameSet,
                  obstacles, config: StepperConfig,
                  clamps: ClampSpec | None = None,
                  contact: ContactConfig | None = None,
                  step_index: int = -1):
    """One semi-implicit Euler substep with the penalty contact model.

    Velocities update from forces at the current state, then positions from
    the new velocities. No linear solve. Raises on non-finite state.
    """
    dt = config.dt
    n = state.n_nodes
    mass = mass_vector(rest)
    f_ext = gravity_force(rest, config.gravity)
    q = pack_dofs(state.positions, state.thetas)
    v = pack_dofs(state.velocities, state.theta_rates)

    res = total_elastic(state, frames, rest, with_hessian=False)
    f = -res.gradient + f_ext - config.damping_coeff * mass * v
    if obstacles is not None and len(obstacles) > 0:
        if contact is None:
            contact = ContactConfig()
        packed = obstacles if isinstance(obstacles, np.ndarray) \
            else pack_obstacles(obstacles)
        raw = detect_arrays(state.positions, packed, rest.radius, 0.0)
        if raw[0]:
            f_nodes, _ = unpack_dofs(f)
            f = f + penalty_from_arrays(raw, contact, state.velocities,
                                        f_nodes)

    v_new = v + dt * f / mass
    if clamps is not None:
        clamp_idx, clamp_vals = clamps.flat()
        v_new[clamp_idx] = 0.0
    q_new = q + dt * v_new
    if clamps is not None:
        q_new[clamp_idx] = clamp_vals

    bad = np.flatnonzero(~np.isfinite(q_new) | ~np.isfinite(v_new))
    if bad.size:
        d = int(bad[0])
        val = q_new[d] if not np.isfinite(q_new[d]) else v_new[d]
        raise InstabilityError(d, float(val), step=step_index)
    # a finite but runaway state should fail loudly too, not only at overflow
    if np.abs(v_new).max() > 1e8:
        d = int(np.abs(v_new).argmax())
        raise InstabilityError(d, float(v_new[d]), step=step_index)

    positions, thetas = unpack_dofs(q_new)
    velocities, theta_rates = unpack_dofs(v_new)
    new_frames = time_parallel_transport(frames, compute_tangents(positions),
                                         thetas)
    return (RodState(positions, thetas, velocities, theta_rates), new_frames)


def kinetic_energy(state: RodState, rest: RestConfig) -> float:
    """Lumped-mass kinetic energy, translation plus twist rotation."""
    trans = 0.5 * float(
        np.sum(rest.node_masses * np.sum(state.velocities ** 2, axis=1)))
    rot = 0.5 * float(np.sum(rest.theta_inertias * state.theta_rates ** 2))
    return trans + rot
