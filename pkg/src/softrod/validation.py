"""Self-diagnostic checks behind the `softrod validate` command.

Every check compares an analytic quantity against an independent route
(finite differences, dense linear algebra, or a closed form) and reports
its worst error. Family energy functions are looked up on the module at
call time, so a corrupted implementation is caught by the check carrying
its name.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import elasticity
from .contact import ContactConfig, Sphere, detect, imc_force, pack_obstacles
from .dynamics import solve_banded
from .elasticity import HALF_BANDWIDTH, band_to_dense, total_elastic
from .errors import SoftRodError
from .geometry import (RodState, build_rod, compute_tangents,
                       curvature_binormals, pack_dofs,
                       time_parallel_transport, unpack_dofs)


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_error) \
            and self.max_error < self.tolerance


def _random_rod(rng, twist_scale: float = 1.0):
    """A moderately bent, twisted rod with non-degenerate edges."""
    state, rest, frames = build_rod(1.0, 0.05, 1000.0, 1e7, 0.5, 21)
    state.positions += 0.01 * rng.standard_normal(state.positions.shape)
    state.thetas += twist_scale * 0.3 * rng.standard_normal(
        state.thetas.shape)
    rest.kappa_bar[:] = 0.5 * rng.standard_normal(rest.kappa_bar.shape)
    rest.psi_bar[:] = 0.1 * rng.standard_normal(rest.psi_bar.shape)
    tangents = compute_tangents(state.positions)
    frames = time_parallel_transport(frames, tangents, state.thetas)
    return state, rest, frames


def _family_at_dofs(name, q, base_frames, rest):
    positions, thetas = unpack_dofs(q)
    state = RodState(positions, thetas, np.zeros_like(positions),
                     np.zeros_like(thetas))
    fn = getattr(elasticity, f"{name}_energy")
    if name == "stretch":
        return fn(state, rest)
    tangents = compute_tangents(positions)
    frames = time_parallel_transport(base_frames, tangents, thetas)
    return fn(state, frames, rest)


def _check_family_gradient(name, rng, n_states=4, h=1e-7) -> float:
    worst = 0.0
    for _ in range(n_states):
        state, rest, frames = _random_rod(rng)
        q = pack_dofs(state.positions, state.thetas)
        _, grad, _ = _family_at_dofs(name, q, frames, rest)
        scale = max(np.abs(grad).max(), 1.0)
        for i in rng.permutation(q.size)[:24]:
            qp = q.copy(); qp[i] += h
            qm = q.copy(); qm[i] -= h
            ep = _family_at_dofs(name, qp, frames, rest)[0]
            em = _family_at_dofs(name, qm, frames, rest)[0]
            fd = (ep - em) / (2.0 * h)
            worst = max(worst, abs(fd - grad[i]) / scale)
    return worst


def _check_hessian(rng, n_states=2, h=1e-6) -> float:
    """Band Hessian vs symmetrized finite differences of the gradient."""
    worst = 0.0
    for _ in range(n_states):
        state, rest, frames = _random_rod(rng)
        q = pack_dofs(state.positions, state.thetas)
        res = total_elastic(state, frames, rest, with_hessian=True)
        dense = band_to_dense(res.hessian_band)
        n = q.size
        jac = np.empty((n, n))
        for i in range(n):
            qp = q.copy(); qp[i] += h
            qm = q.copy(); qm[i] -= h
            jac[i] = (elasticity.gradient_at_dofs(qp, frames, rest)
                      - elasticity.gradient_at_dofs(qm, frames, rest)) \
                / (2.0 * h)
        sym = 0.5 * (jac + jac.T)
        worst = max(worst,
                    np.abs(dense - sym).max() / max(np.abs(sym).max(), 1.0))
    return worst


def _contact_scene(rng):
    state, rest, frames = _random_rod(rng, twist_scale=0.0)
    # a sphere close to a random interior edge
    j = int(rng.integers(2, 18))
    mid = 0.5 * (state.positions[j] + state.positions[j + 1])
    off = rng.standard_normal(3)
    off /= np.linalg.norm(off)
    gap = rng.uniform(-0.5, 1.5) * 0.005
    sphere = Sphere(center=mid + (0.05 + 0.03 + gap) * off, radius=0.03)
    return state, rest, sphere


def _check_contact_gradient(rng, n_scenes=10, h=1e-7) -> float:
    config = ContactConfig()
    worst = 0.0
    for _ in range(n_scenes):
        state, rest, sphere = _contact_scene(rng)
        packed = pack_obstacles([sphere])
        pairs = detect(state, packed, 2.0 * config.delta, rest.radius)
        if not pairs:
            continue
        energy, grad, _, _ = imc_force(pairs, config, state.n_nodes)
        scale = max(np.abs(grad).max(), 1.0)

        def energy_at(q):
            positions, thetas = unpack_dofs(q)
            st = RodState(positions, thetas, np.zeros_like(positions),
                          np.zeros_like(thetas))
            prs = detect(st, packed, 2.0 * config.delta, rest.radius)
            return imc_force(prs, config, state.n_nodes)[0]

        q = pack_dofs(state.positions, state.thetas)
        for i in rng.permutation(q.size)[:18]:
            qp = q.copy(); qp[i] += h
            qm = q.copy(); qm[i] -= h
            fd = (energy_at(qp) - energy_at(qm)) / (2.0 * h)
            worst = max(worst, abs(fd - grad[i]) / scale)
    return worst


def _check_contact_smoothness() -> float:
    """dE/dgap must be differentiable straight through gap = 0."""
    config = ContactConfig()
    k, kap = config.stiffness, config.sharpness

    def d1(gap):
        x = kap * -gap
        phi = (np.logaddexp(0.0, x)) / kap
        sig = 1.0 / (1.0 + np.exp(-x))
        return -2.0 * k * phi * sig

    def d2(gap):
        x = kap * -gap
        phi = (np.logaddexp(0.0, x)) / kap
        sig = 1.0 / (1.0 + np.exp(-x))
        return 2.0 * k * (sig * sig + phi * kap * sig * (1.0 - sig))

    gaps = np.linspace(-2 * config.delta, 2 * config.delta, 2001)
    h = 1e-8
    fd = (d1(gaps + h) - d1(gaps - h)) / (2.0 * h)
    return float(np.abs(fd - d2(gaps)).max() / np.abs(d2(gaps)).max())


def _check_frame_transport(rng, n_steps=100) -> float:
    state, rest, frames = _random_rod(rng)
    worst = 0.0
    for _ in range(n_steps):
        state.positions += 0.002 * rng.standard_normal(
            state.positions.shape)
        tangents = compute_tangents(state.positions)
        frames = time_parallel_transport(frames, tangents, state.thetas)
        for a, b in ((frames.d1, frames.d1), (frames.d2, frames.d2)):
            worst = max(worst, np.abs((a * b).sum(axis=1) - 1.0).max())
        worst = max(worst, np.abs((frames.d1 * frames.d2).sum(axis=1)).max())
        worst = max(worst, np.abs((frames.d1 * tangents).sum(axis=1)).max())
    return worst


def _check_banded_solver(rng, n_systems=5) -> float:
    worst = 0.0
    n = 83
    for _ in range(n_systems):
        band = rng.standard_normal((2 * HALF_BANDWIDTH + 1, n))
        dense = band_to_dense(band)
        dense = 0.5 * (dense + dense.T) + 2.0 * n * np.eye(n)
        # refold the symmetrized matrix into band storage
        refold = np.zeros_like(band)
        for i in range(n):
            lo, hi = max(0, i - HALF_BANDWIDTH), min(n, i + HALF_BANDWIDTH + 1)
            for j in range(lo, hi):
                refold[HALF_BANDWIDTH + i - j, j] = dense[i, j]
        rhs = rng.standard_normal(n)
        x = solve_banded(refold, rhs)
        ref = np.linalg.solve(dense, rhs)
        worst = max(worst, np.abs(x - ref).max() / np.abs(ref).max())
    return worst


def _check_arc_curvature() -> float:
    """Two unit edges at angle phi carry binormal magnitude 2 tan(phi/2)."""
    worst = 0.0
    for deg in (5.0, 30.0, 90.0):
        phi = math.radians(deg)
        t = np.array([[1.0, 0.0, 0.0],
                      [math.cos(phi), math.sin(phi), 0.0]])
        kb = curvature_binormals(t)
        worst = max(worst,
                    abs(np.linalg.norm(kb[0]) - 2.0 * math.tan(phi / 2.0)))
    return worst


_CHECKS = (
    ("stretch_energy_gradient_fd", 1e-6,
     lambda rng: _check_family_gradient("stretch", rng)),
    ("bend_energy_gradient_fd", 1e-6,
     lambda rng: _check_family_gradient("bend", rng)),
    ("twist_energy_gradient_fd", 1e-6,
     lambda rng: _check_family_gradient("twist", rng)),
    ("elastic_hessian_fd", 1e-5, _check_hessian),
    ("contact_gradient_fd", 1e-5, _check_contact_gradient),
    ("contact_energy_smoothness", 1e-5,
     lambda rng: _check_contact_smoothness()),
    ("frame_transport_orthonormality", 1e-12, _check_frame_transport),
    ("banded_solve_vs_dense", 1e-9, _check_banded_solver),
    ("curvature_arc_identity", 1e-9, lambda rng: _check_arc_curvature()),
)


def run_checks(tol_scale: float = 1.0, seed: int = 0) -> list[CheckResult]:
    """Run every check; tolerances are multiplied by tol_scale."""
    results = []
    for name, tol, fn in _CHECKS:
        rng = np.random.default_rng(seed)
        try:
            err = float(fn(rng))
        except SoftRodError as exc:
            err = float("inf")
            name = f"{name} ({exc})"
        results.append(CheckResult(name, err, tol * tol_scale))
    return results
