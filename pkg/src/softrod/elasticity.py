"""Elastic energies of the discretized rod and their exact derivatives.

Three families act on the interleaved DOF vector:

* stretching: per edge, quadratic in the strain eps = |e|/rest - 1,
  E_s = 1/2 K_s sum eps^2 * rest_length
* bending: per interior node, quadratic in the integrated material curvature
  deviation, E_b = 1/2 K_b sum |kappa - kappa_bar|^2 / voronoi
* twisting: per interior node, quadratic in the twist deviation
  psi = theta_out - theta_in + ref_twist, E_t = 1/2 K_t sum (psi - psi_bar)^2
  / voronoi

Gradients and Hessians account for the co-rotation of the time-parallel
reference frames with the centerline, so they match finite differences of an
energy evaluated with frames re-transported at the perturbed configuration.
Each interior node's bend+twist stencil couples 11 consecutive DOFs, which
caps the Hessian's half-bandwidth at 10; it is assembled in LAPACK band
storage.
"""

from dataclasses import dataclass

import numpy as np

from .backend import USE_NUMBA, hot
from .errors import AntiparallelTangentError, DegenerateEdgeError
from .geometry import (
    FrameSet,
    RestConfig,
    RodState,
    compute_tangents,
    dof_count,
    time_parallel_transport,
    unpack_dofs,
)

HALF_BANDWIDTH = 10
BAND_ROWS = 2 * HALF_BANDWIDTH + 1

_STRETCH_OFFSETS = np.array([0, 1, 2, 4, 5, 6], dtype=np.int64)
_STENCIL_OFFSETS = np.arange(11, dtype=np.int64)


@dataclass
class ElasticResult:
    """Total elastic energy with gradient and optional banded Hessian."""

    energy: float
    stretch: float
    bend: float
    twist: float
    gradient: np.ndarray            # (4N-1,)
    hessian_band: np.ndarray | None  # (21, 4N-1) LAPACK band or None


# ---------------------------------------------------------------------------
# kernels


@hot
def _stretch_kernel(positions, rest_lengths, ks, grad, blocks, with_hess,
                    psd_clamp):
    """Stretching energy; gradient scattered in place, 6x6 edge blocks out.

    Block DOF order is [node j (xyz), node j+1 (xyz)]. With psd_clamp the
    transverse (compression-softening) eigenvalue is clamped at zero, which
    equals the exact eigenvalue projection for this block structure.
    """
    n_edges = positions.shape[0] - 1
    energy = 0.0
    for j in range(n_edges):
        ex = positions[j + 1, 0] - positions[j, 0]
        ey = positions[j + 1, 1] - positions[j, 1]
        ez = positions[j + 1, 2] - positions[j, 2]
        ln = (ex * ex + ey * ey + ez * ez) ** 0.5
        lam = rest_lengths[j]
        eps = ln / lam - 1.0
        energy += 0.5 * ks * eps * eps * lam
        tx = ex / ln
        ty = ey / ln
        tz = ez / ln
        g = ks * eps
        base = 4 * j
        grad[base + 0] -= g * tx
        grad[base + 1] -= g * ty
        grad[base + 2] -= g * tz
        grad[base + 4] += g * tx
        grad[base + 5] += g * ty
        grad[base + 6] += g * tz
        if with_hess:
            c_par = ks / lam
            c_perp = ks * eps / ln
            if psd_clamp and c_perp < 0.0:
                c_perp = 0.0
            t = np.empty(3)
            t[0] = tx
            t[1] = ty
            t[2] = tz
            for a in range(3):
                for b in range(3):
                    m = (c_par - c_perp) * t[a] * t[b]
                    if a == b:
                        m += c_perp
                    blocks[j, a, b] = m
                    blocks[j, a + 3, b + 3] = m
                    blocks[j, a, b + 3] = -m
                    blocks[j, a + 3, b] = -m
    return energy


@hot
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@hot
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@hot
def _sym_outer(a, b, scale, out):
    """out += scale * (a b^T + b a^T)"""
    for r in range(3):
        for c in range(3):
            out[r, c] += scale * (a[r] * b[c] + b[r] * a[c])


@hot
def _outer_into(a, b, scale, out):
    """out += scale * a b^T"""
    for r in range(3):
        for c in range(3):
            out[r, c] += scale * a[r] * b[c]


@hot
def _crossmat_into(v, scale, out):
    """out += scale * [v]_x (the matrix with [v]_x w = v x w)"""
    out[0, 1] -= scale * v[2]
    out[0, 2] += scale * v[1]
    out[1, 0] += scale * v[2]
    out[1, 2] -= scale * v[0]
    out[2, 0] -= scale * v[1]
    out[2, 1] += scale * v[0]


@hot
def _compose_position_blocks(aee, aff, aef, scale, out):
    """Chain (e, f) second derivatives to the three stencil nodes.

    e = x_i - x_{i-1}, f = x_{i+1} - x_i; node blocks live at local offsets
    0 (x_{i-1}), 4 (x_i), 8 (x_{i+1}).
    """
    for r in range(3):
        for c in range(3):
            ee = aee[r, c]
            ff = aff[r, c]
            ef = aef[r, c]
            fe = aef[c, r]
            out[r, c] += scale * ee
            out[4 + r, 4 + c] += scale * (ee - ef - fe + ff)
            out[8 + r, 8 + c] += scale * ff
            v01 = scale * (-ee + ef)
            out[r, 4 + c] += v01
            out[4 + c, r] += v01
            v02 = scale * (-ef)
            out[r, 8 + c] += v02
            out[8 + c, r] += v02
            v12 = scale * (ef - ff)
            out[4 + r, 8 + c] += v12
            out[8 + c, 4 + r] += v12


@hot
def _compose_theta_mixed(g_e, g_f, col, scale, out):
    """Chain mixed (position, theta) second derivatives into column `col`."""
    for r in range(3):
        v0 = scale * (-g_e[r])
        v1 = scale * (g_e[r] - g_f[r])
        v2 = scale * g_f[r]
        out[r, col] += v0
        out[col, r] += v0
        out[4 + r, col] += v1
        out[col, 4 + r] += v1
        out[8 + r, col] += v2
        out[col, 8 + r] += v2


@hot
def _bend_twist_kernel(positions, thetas, tangents, m1, m2, ref_twist,
                       kappa_bar, psi_bar, voronoi, kb_stiff, kt_stiff,
                       grad, blocks, with_hess):
    """Bending and twisting energy over all interior nodes.

    Scatters the gradient in place; when with_hess is set, writes one 11x11
    stencil block per interior node (DOF order x_{i-1}, theta_in, x_i,
    theta_out, x_{i+1}). Returns (status, bend_energy, twist_energy) where a
    nonzero status flags edge foldback (tangents at ~180 degrees).
    """
    n_nodes = positions.shape[0]
    e_bend = 0.0
    e_twist = 0.0

    kb = np.empty(3)
    tilde_t = np.empty(3)
    tilde_m1 = np.empty(3)
    tilde_m2 = np.empty(3)
    dk1_de = np.empty(3)
    dk1_df = np.empty(3)
    dk2_de = np.empty(3)
    dk2_df = np.empty(3)
    tmp = np.empty(3)
    tmp2 = np.empty(3)
    gk1 = np.empty(11)
    gk2 = np.empty(11)
    gpsi = np.empty(11)
    aee = np.empty((3, 3))
    aff = np.empty((3, 3))
    aef = np.empty((3, 3))
    mvec_e = np.empty(3)
    mvec_f = np.empty(3)
    msum = np.empty(3)
    ce = np.empty(3)
    cf = np.empty(3)
    phie = np.empty(3)
    phif = np.empty(3)
    ge = np.empty(3)
    gf = np.empty(3)

    for i in range(1, n_nodes - 1):
        te = tangents[i - 1]
        tf = tangents[i]
        ex = positions[i, 0] - positions[i - 1, 0]
        ey = positions[i, 1] - positions[i - 1, 1]
        ez = positions[i, 2] - positions[i - 1, 2]
        ne = (ex * ex + ey * ey + ez * ez) ** 0.5
        fx = positions[i + 1, 0] - positions[i, 0]
        fy = positions[i + 1, 1] - positions[i, 1]
        fz = positions[i + 1, 2] - positions[i, 2]
        nf = (fx * fx + fy * fy + fz * fz) ** 0.5
        chi = 1.0 + _dot(te, tf)
        if chi < 1e-12:
            return i, e_bend, e_twist
        _cross(te, tf, kb)
        for k in range(3):
            kb[k] *= 2.0 / chi
            tilde_t[k] = (te[k] + tf[k]) / chi
            tilde_m1[k] = (m1[i - 1, k] + m1[i, k]) / chi
            tilde_m2[k] = (m2[i - 1, k] + m2[i, k]) / chi

        m1e = m1[i - 1]
        m2e = m2[i - 1]
        m1f = m1[i]
        m2f = m2[i]

        k1 = 0.5 * (_dot(kb, m2e) + _dot(kb, m2f))
        k2 = 0.5 * (_dot(kb, m1e) + _dot(kb, m1f))
        psi = thetas[i] - thetas[i - 1] + ref_twist[i - 1]

        inv_v = 1.0 / voronoi[i - 1]
        dk1 = k1 - kappa_bar[i - 1, 0]
        dk2 = k2 - kappa_bar[i - 1, 1]
        dps = psi - psi_bar[i - 1]
        e_bend += 0.5 * kb_stiff * (dk1 * dk1 + dk2 * dk2) * inv_v
        e_twist += 0.5 * kt_stiff * dps * dps * inv_v

        # measure gradients on the 11-DOF stencil
        _cross(tf, tilde_m2, tmp)
        for k in range(3):
            dk1_de[k] = (-k1 * tilde_t[k] + tmp[k]) / ne
        _cross(te, tilde_m2, tmp)
        for k in range(3):
            dk1_df[k] = (-k1 * tilde_t[k] - tmp[k]) / nf
        _cross(tf, tilde_m1, tmp)
        for k in range(3):
            dk2_de[k] = (-k2 * tilde_t[k] + tmp[k]) / ne
        _cross(te, tilde_m1, tmp)
        for k in range(3):
            dk2_df[k] = (-k2 * tilde_t[k] - tmp[k]) / nf

        for k in range(3):
            gk1[k] = -dk1_de[k]
            gk1[4 + k] = dk1_de[k] - dk1_df[k]
            gk1[8 + k] = dk1_df[k]
            gk2[k] = -dk2_de[k]
            gk2[4 + k] = dk2_de[k] - dk2_df[k]
            gk2[8 + k] = dk2_df[k]
            gpsi[k] = -0.5 * kb[k] / ne
            gpsi[4 + k] = 0.5 * kb[k] / ne - 0.5 * kb[k] / nf
            gpsi[8 + k] = 0.5 * kb[k] / nf
        gk1[3] = -0.5 * _dot(kb, m1e)
        gk1[7] = -0.5 * _dot(kb, m1f)
        gk2[3] = 0.5 * _dot(kb, m2e)
        gk2[7] = 0.5 * _dot(kb, m2f)
        gpsi[3] = -1.0
        gpsi[7] = 1.0

        c1 = kb_stiff * dk1 * inv_v
        c2 = kb_stiff * dk2 * inv_v
        ct = kt_stiff * dps * inv_v

        base = 4 * (i - 1)
        for a in range(11):
            grad[base + a] += c1 * gk1[a] + c2 * gk2[a] + ct * gpsi[a]

        if not with_hess:
            continue

        block = blocks[i - 1]
        block[:, :] = 0.0

        # Gauss-Newton part: stiffness-weighted outer products of gradients
        w1 = kb_stiff * inv_v
        wt = kt_stiff * inv_v
        for a in range(11):
            for b in range(11):
                block[a, b] += (w1 * (gk1[a] * gk1[b] + gk2[a] * gk2[b])
                                + wt * gpsi[a] * gpsi[b])

        inv_ne2 = 1.0 / (ne * ne)
        inv_nf2 = 1.0 / (nf * nf)
        inv_nef = 1.0 / (ne * nf)

        # --- curvature second derivatives ---
        # Position blocks are the exact second variation of the energy with
        # frames re-transported at the evaluated configuration; the frame
        # co-rotation makes them differ from naive differentiation of the
        # gradient formulas. kappa1 and kappa2 share one structure with the
        # material directions swapped.
        if c1 != 0.0 or c2 != 0.0:
            inv_chi = 1.0 / chi
            inv_chi2 = inv_chi * inv_chi
            dkm1e = _dot(kb, m1e)
            dkm2e = _dot(kb, m2e)
            dkm1f = _dot(kb, m1f)
            dkm2f = _dot(kb, m2f)
            for k in range(3):
                ce[k] = (tf[k] - (chi - 1.0) * te[k]) / ne
                cf[k] = (te[k] - (chi - 1.0) * tf[k]) / nf

            for comp in range(2):
                if comp == 0:
                    kv = k1
                    cc = c1
                    we = m2e
                    wf = m2f
                    oe = m1e
                    of = m1f
                    dkw_e = dkm2e
                    dkw_f = dkm2f
                    dko_e = dkm1e
                    dko_f = dkm1f
                else:
                    kv = k2
                    cc = c2
                    we = m1e
                    wf = m1f
                    oe = m2e
                    of = m2f
                    dkw_e = dkm1e
                    dkw_f = dkm1f
                    dko_e = dkm2e
                    dko_f = dkm2f
                for k in range(3):
                    msum[k] = we[k] + wf[k]
                _cross(tf, msum, phie)
                _cross(te, msum, phif)
                for k in range(3):
                    ge[k] = (phie[k] - chi * kv * te[k]) / ne
                    gf[k] = (phif[k] + chi * kv * tf[k]) / nf

                aee[:, :] = 0.0
                _sym_outer(te, ge, -inv_chi / ne, aee)
                _sym_outer(ce, ge, -inv_chi2, aee)
                _sym_outer(te, ce, kv * inv_chi / ne, aee)
                _outer_into(ce, ce, 2.0 * kv * inv_chi2, aee)
                _sym_outer(kb, we, 0.5 * inv_ne2, aee)
                _outer_into(oe, oe, 0.5 * dkw_e * inv_ne2, aee)
                _sym_outer(oe, we, -0.25 * dko_e * inv_ne2, aee)
                coef = -kv * inv_chi - 0.5 * dkw_e
                for r in range(3):
                    aee[r, r] += coef * inv_ne2
                _outer_into(te, te, -coef * inv_ne2, aee)

                aff[:, :] = 0.0
                _sym_outer(tf, gf, inv_chi / nf, aff)
                _sym_outer(cf, gf, inv_chi2, aff)
                _sym_outer(tf, cf, kv * inv_chi / nf, aff)
                _outer_into(cf, cf, 2.0 * kv * inv_chi2, aff)
                _sym_outer(kb, wf, 0.5 * inv_nf2, aff)
                _outer_into(of, of, 0.5 * dkw_f * inv_nf2, aff)
                _sym_outer(of, wf, -0.25 * dko_f * inv_nf2, aff)
                coef = -kv * inv_chi - 0.5 * dkw_f
                for r in range(3):
                    aff[r, r] += coef * inv_nf2
                _outer_into(tf, tf, -coef * inv_nf2, aff)

                aef[:, :] = 0.0
                _crossmat_into(msum, -inv_chi * inv_nef, aef)
                _outer_into(te, phif, inv_chi * inv_nef, aef)
                _outer_into(phie, tf, -inv_chi * inv_nef, aef)
                s = kv * inv_chi * inv_nef
                for r in range(3):
                    aef[r, r] -= s
                _outer_into(te, te, s, aef)
                _outer_into(tf, tf, s, aef)
                _outer_into(te, tf, s, aef)
                _outer_into(ce, gf, inv_chi2, aef)
                _outer_into(ge, cf, -inv_chi2, aef)
                _outer_into(ce, cf, 2.0 * kv * inv_chi2, aef)
                _compose_position_blocks(aee, aff, aef, cc, block)

            # mixed with thetas: d(dk/dtheta)/d(e,f)
            half_kb_m1e = 0.5 * dkm1e
            half_kb_m1f = 0.5 * dkm1f
            _cross(tf, m1e, tmp)
            _cross(te, m1e, tmp2)
            for k in range(3):
                mvec_e[k] = (half_kb_m1e * tilde_t[k] - tmp[k] / chi) / ne
                mvec_f[k] = (half_kb_m1e * tilde_t[k] + tmp2[k] / chi) / nf
            _compose_theta_mixed(mvec_e, mvec_f, 3, c1, block)
            _cross(tf, m1f, tmp)
            _cross(te, m1f, tmp2)
            for k in range(3):
                mvec_e[k] = (half_kb_m1f * tilde_t[k] - tmp[k] / chi) / ne
                mvec_f[k] = (half_kb_m1f * tilde_t[k] + tmp2[k] / chi) / nf
            _compose_theta_mixed(mvec_e, mvec_f, 7, c1, block)
            # theta-theta
            block[3, 3] += c1 * (-0.5 * dkm2e)
            block[7, 7] += c1 * (-0.5 * dkm2f)

            # kappa2 theta couplings trade sign because dm2/dtheta = -m1
            half_kb_m2e = 0.5 * dkm2e
            half_kb_m2f = 0.5 * dkm2f
            _cross(tf, m2e, tmp)
            _cross(te, m2e, tmp2)
            for k in range(3):
                mvec_e[k] = -(half_kb_m2e * tilde_t[k] - tmp[k] / chi) / ne
                mvec_f[k] = -(half_kb_m2e * tilde_t[k] + tmp2[k] / chi) / nf
            _compose_theta_mixed(mvec_e, mvec_f, 3, c2, block)
            _cross(tf, m2f, tmp)
            _cross(te, m2f, tmp2)
            for k in range(3):
                mvec_e[k] = -(half_kb_m2f * tilde_t[k] - tmp[k] / chi) / ne
                mvec_f[k] = -(half_kb_m2f * tilde_t[k] + tmp2[k] / chi) / nf
            _compose_theta_mixed(mvec_e, mvec_f, 7, c2, block)
            block[3, 3] += c2 * (-0.5 * dkm1e)
            block[7, 7] += c2 * (-0.5 * dkm1f)

        # --- second derivatives of the reference twist ---
        if ct != 0.0:
            aee[:, :] = 0.0
            for k in range(3):
                tmp[k] = te[k] + tilde_t[k]
            _sym_outer(kb, tmp, -0.25 * inv_ne2, aee)
            aff[:, :] = 0.0
            for k in range(3):
                tmp[k] = tf[k] + tilde_t[k]
            _sym_outer(kb, tmp, -0.25 * inv_nf2, aff)
            aef[:, :] = 0.0
            _crossmat_into(tilde_t, 0.5 * inv_nef, aef)
            _outer_into(kb, tilde_t, -0.25 * inv_nef, aef)
            _outer_into(tilde_t, kb, -0.25 * inv_nef, aef)
            _compose_position_blocks(aee, aff, aef, ct, block)

    return 0, e_bend, e_twist


@hot
def _scatter_band_kernel(band, u, blocks, starts, offsets):
    n_blocks = blocks.shape[0]
    k = offsets.shape[0]
    for m in range(n_blocks):
        base = starts[m]
        for a in range(k):
            r = base + offsets[a]
            for b in range(k):
                c = base + offsets[b]
                band[u + r - c, c] += blocks[m, a, b]


# ---------------------------------------------------------------------------
# assembly helpers


@hot
def _psd_project_kernel(blocks, out):
    """Batched eigenvalue clamp for small symmetric blocks.

    Cyclic Jacobi sweeps; blocks already at or above zero are copied
    through untouched so the common unbuckled case costs one scan.
    """
    m, n = blocks.shape[0], blocks.shape[1]
    a = np.empty((n, n))
    v = np.empty((n, n))
    low = np.empty((n, n))
    for bi in range(m):
        # tolerant Cholesky first: certifies the common PSD case cheaply,
        # including the exactly-semidefinite blocks of an unloaded rod
        scale = 1e-300
        for r in range(n):
            d = abs(blocks[bi, r, r])
            if d > scale:
                scale = d
        tol = 1e-10 * scale
        coltol = np.sqrt(tol * scale)
        psd = True
        for j in range(n):
            d = blocks[bi, j, j]
            for k in range(j):
                d -= low[j, k] * low[j, k]
            if d < -tol:
                psd = False
                break
            if d <= tol:
                low[j, j] = 0.0
                for i in range(j + 1, n):
                    s = blocks[bi, i, j]
                    for k in range(j):
                        s -= low[i, k] * low[j, k]
                    if abs(s) > coltol:
                        psd = False
                        break
                    low[i, j] = 0.0
                if not psd:
                    break
            else:
                low[j, j] = np.sqrt(d)
                for i in range(j + 1, n):
                    s = blocks[bi, i, j]
                    for k in range(j):
                        s -= low[i, k] * low[j, k]
                    low[i, j] = s / low[j, j]
        if psd:
            for r in range(n):
                for c in range(n):
                    out[bi, r, c] = blocks[bi, r, c]
            continue
        fro2 = 0.0
        for r in range(n):
            for c in range(n):
                a[r, c] = blocks[bi, r, c]
                fro2 += a[r, c] * a[r, c]
        for r in range(n):
            for c in range(n):
                v[r, c] = 1.0 if r == c else 0.0
        stop = 1e-24 * fro2 + 1e-300
        for _ in range(40):
            off2 = 0.0
            for r in range(n - 1):
                for c in range(r + 1, n):
                    off2 += a[r, c] * a[r, c]
            if off2 <= stop:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    g = a[p, q]
                    if g * g <= stop / (n * n):
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * g)
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    cc = 1.0 / np.sqrt(t * t + 1.0)
                    ss = t * cc
                    tau = ss / (1.0 + cc)
                    a[p, p] -= t * g
                    a[q, q] += t * g
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for k in range(n):
                        if k != p and k != q:
                            akp = a[k, p]
                            akq = a[k, q]
                            a[k, p] = akp - ss * (akq + tau * akp)
                            a[p, k] = a[k, p]
                            a[k, q] = akq + ss * (akp - tau * akq)
                            a[q, k] = a[k, q]
                        vkp = v[k, p]
                        vkq = v[k, q]
                        v[k, p] = vkp - ss * (vkq + tau * vkp)
                        v[k, q] = vkq + ss * (vkp - tau * vkq)
        lam_min = a[0, 0]
        for k in range(1, n):
            if a[k, k] < lam_min:
                lam_min = a[k, k]
        if lam_min >= 0.0:
            for r in range(n):
                for c in range(n):
                    out[bi, r, c] = blocks[bi, r, c]
            continue
        for r in range(n):
            for c in range(r, n):
                acc = 0.0
                for k in range(n):
                    lam = a[k, k]
                    if lam > 0.0:
                        acc += v[r, k] * lam * v[c, k]
                out[bi, r, c] = acc
                out[bi, c, r] = acc


def project_psd(blocks: np.ndarray) -> np.ndarray:
    """Clamp each symmetric block's eigenvalues at zero (batched).

    Small batches go through a compiled Jacobi solver (LAPACK's per-call
    overhead dominates there); larger ones use the batched eigh path.
    """
    if blocks.shape[0] == 0:
        return blocks
    if USE_NUMBA and blocks.shape[0] <= 8:
        out = np.empty_like(blocks)
        _psd_project_kernel(blocks, out)
        return out
    w, v = np.linalg.eigh(blocks)
    w = np.maximum(w, 0.0)
    return (v * w[:, None, :]) @ np.swapaxes(v, -1, -2)


def scatter_band(band: np.ndarray, blocks: np.ndarray, starts: np.ndarray,
                 offsets: np.ndarray) -> None:
    _scatter_band_kernel(band, HALF_BANDWIDTH,
                         np.ascontiguousarray(blocks),
                         np.ascontiguousarray(starts, dtype=np.int64),
                         np.ascontiguousarray(offsets, dtype=np.int64))


def band_to_dense(band: np.ndarray) -> np.ndarray:
    """Expand LAPACK band storage to a dense matrix (tests, oracles)."""
    n = band.shape[1]
    u = HALF_BANDWIDTH
    dense = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - u), min(n, i + u + 1)):
            dense[i, j] = band[u + i - j, j]
    return dense


def _stretch(state: RodState, rest: RestConfig, with_hess: bool,
             psd_clamp: bool = False):
    n = state.n_nodes
    grad = np.zeros(dof_count(n))
    blocks = np.empty((n - 1, 6, 6)) if with_hess else np.empty((0, 6, 6))
    energy = _stretch_kernel(state.positions, rest.rest_lengths,
                             rest.stretch_stiffness, grad, blocks,
                             with_hess, psd_clamp)
    return energy, grad, blocks


def _bend_twist(state: RodState, frames: FrameSet, rest: RestConfig,
                kb_stiff: float, kt_stiff: float, with_hess: bool):
    n = state.n_nodes
    grad = np.zeros(dof_count(n))
    blocks = np.empty((n - 2, 11, 11)) if with_hess else np.empty((0, 11, 11))
    status, e_bend, e_twist = _bend_twist_kernel(
        state.positions, state.thetas, frames.tangents, frames.m1, frames.m2,
        frames.ref_twist, rest.kappa_bar, rest.psi_bar, rest.voronoi_lengths,
        kb_stiff, kt_stiff, grad, blocks, with_hess)
    if status != 0:
        raise AntiparallelTangentError(status - 1)
    return e_bend, e_twist, grad, blocks


# ---------------------------------------------------------------------------
# public API


def stretch_energy(state: RodState, rest: RestConfig, with_hessian=False):
    """Stretch energy, gradient, and per-edge 6x6 Hessian blocks."""
    e, grad, blocks = _stretch(state, rest, with_hessian)
    return e, grad, blocks


def bend_energy(state: RodState, frames: FrameSet, rest: RestConfig,
                with_hessian=False):
    """Bend energy, gradient, and per-node 11x11 Hessian blocks."""
    e_bend, _, grad, blocks = _bend_twist(state, frames, rest,
                                          rest.bend_stiffness, 0.0,
                                          with_hessian)
    return e_bend, grad, blocks


def twist_energy(state: RodState, frames: FrameSet, rest: RestConfig,
                 with_hessian=False):
    """Twist energy, gradient, and per-node 11x11 Hessian blocks."""
    _, e_twist, grad, blocks = _bend_twist(state, frames, rest, 0.0,
                                           rest.twist_stiffness, with_hessian)
    return e_twist, grad, blocks


def stencil_starts(n_nodes: int):
    """First DOF of each bend/twist stencil block (interior nodes)."""
    return 4 * np.arange(n_nodes - 2, dtype=np.int64)


def edge_starts(n_nodes: int):
    """First DOF of each stretch block (edges)."""
    return 4 * np.arange(n_nodes - 1, dtype=np.int64)


def total_elastic(state: RodState, frames: FrameSet, rest: RestConfig,
                  with_hessian: bool = True,
                  psd_project: bool = False) -> ElasticResult:
    """All three elastic families, gradient, and optional banded Hessian.

    With psd_project each stencil block is clamped to positive semidefinite
    before scattering (eigenvalue projection); the gradient is untouched.
    """
    n = state.n_nodes
    e_s, grad_s, blocks_s = _stretch(state, rest, with_hessian, psd_project)
    e_b, e_t, grad_bt, blocks_bt = _bend_twist(
        state, frames, rest, rest.bend_stiffness, rest.twist_stiffness,
        with_hessian)
    grad = grad_s + grad_bt
    band = None
    if with_hessian:
        if psd_project:
            blocks_bt = project_psd(blocks_bt)
        band = np.zeros((BAND_ROWS, dof_count(n)))
        scatter_band(band, blocks_s, edge_starts(n), _STRETCH_OFFSETS)
        scatter_band(band, blocks_bt, stencil_starts(n), _STENCIL_OFFSETS)
    return ElasticResult(energy=e_s + e_b + e_t, stretch=e_s, bend=e_b,
                         twist=e_t, gradient=grad, hessian_band=band)


def energy_at_dofs(q: np.ndarray, base_frames: FrameSet,
                   rest: RestConfig) -> float:
    """Total elastic energy at DOF vector q, frames transported from base.

    This is the scalar function whose exact derivatives the analytic
    gradient/Hessian provide at the base configuration; finite-difference
    oracles and the implicit stepper both evaluate it.
    """
    positions, thetas = unpack_dofs(q)
    tangents = compute_tangents(positions)
    frames = time_parallel_transport(base_frames, tangents, thetas)
    state = RodState(positions, thetas, np.zeros_like(positions),
                     np.zeros_like(thetas))
    res = total_elastic(state, frames, rest, with_hessian=False)
    return res.energy


def gradient_at_dofs(q: np.ndarray, base_frames: FrameSet,
                     rest: RestConfig) -> np.ndarray:
    """Analytic elastic gradient at q, frames transported from base."""
    positions, thetas = unpack_dofs(q)
    tangents = compute_tangents(positions)
    frames = time_parallel_transport(base_frames, tangents, thetas)
    state = RodState(positions, thetas, np.zeros_like(positions),
                     np.zeros_like(thetas))
    res = total_elastic(state, frames, rest, with_hessian=False)
    return res.gradient
