import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import arc_positions, perturbed_rod, rodrigues
from softrod import geometry
from softrod.errors import (AntiparallelTangentError, DegenerateEdgeError,
                            InvalidParameterError)


def build_default(n_nodes=21):
    return geometry.build_rod(length=1.0, radius=0.05, density=1000.0,
                              youngs_modulus=1e7, poisson_ratio=0.5,
                              n_nodes=n_nodes)


class TestBuildRod:
    def test_standard_rod_dimensions(self):
        state, rest, frames = build_default()
        assert state.positions.shape == (21, 3)
        assert rest.rest_lengths.shape == (20,)
        np.testing.assert_allclose(rest.rest_lengths, 0.05, rtol=1e-14)
        np.testing.assert_array_equal(state.velocities, 0.0)
        np.testing.assert_array_equal(rest.kappa_bar, 0.0)
        np.testing.assert_array_equal(rest.psi_bar, 0.0)

    def test_stretch_stiffness_is_axial_rigidity(self):
        # independent recomputation: K_s = E * pi r^2
        _, rest, _ = build_default()
        expected = 1e7 * math.pi * 0.05 ** 2
        assert abs(expected - 7.853981633974483e4) < 1e-6
        assert rest.stretch_stiffness == pytest.approx(expected, rel=1e-12)

    def test_bend_twist_stiffness(self):
        _, rest, _ = build_default()
        moment = math.pi * 0.05 ** 4 / 4.0
        shear = 1e7 / (2.0 * 1.5)  # nu = 0.5 accepted exactly
        assert rest.bend_stiffness == pytest.approx(1e7 * moment, rel=1e-12)
        assert rest.twist_stiffness == pytest.approx(shear * 2 * moment,
                                                     rel=1e-12)

    def test_lumped_mass_split(self):
        # 3 nodes: half of each edge's mass to its endpoints -> 1/4,1/2,1/4
        _, rest, _ = build_default(n_nodes=3)
        total = 1000.0 * math.pi * 0.05 ** 2 * 1.0
        assert total == pytest.approx(7.853981633974483, rel=1e-12)
        np.testing.assert_allclose(
            rest.node_masses, total * np.array([0.25, 0.5, 0.25]),
            rtol=1e-12)
        assert rest.node_masses.sum() == pytest.approx(total, rel=1e-12)

    def test_voronoi_lengths(self):
        _, rest, _ = build_default()
        expected = 0.5 * (rest.rest_lengths[:-1] + rest.rest_lengths[1:])
        np.testing.assert_allclose(rest.voronoi_lengths, expected,
                                   rtol=1e-15)

    @pytest.mark.parametrize("kwargs", [
        {"n_nodes": 2},
        {"radius": -0.05},
        {"length": 0.0},
        {"density": -1.0},
        {"youngs_modulus": 0.0},
        {"poisson_ratio": 0.7},
    ])
    def test_rejects_bad_parameters(self, kwargs):
        params = dict(length=1.0, radius=0.05, density=1000.0,
                      youngs_modulus=1e7, poisson_ratio=0.5, n_nodes=21)
        params.update(kwargs)
        with pytest.raises(InvalidParameterError):
            geometry.build_rod(**params)

    def test_initial_frames_orthonormal_with_tangent_axis(self):
        state, _, frames = build_default()
        np.testing.assert_allclose(frames.tangents, [[1.0, 0.0, 0.0]] * 20,
                                   atol=1e-15)
        for a, b in ((frames.d1, frames.d2), (frames.d2, frames.tangents),
                     (frames.tangents, frames.d1)):
            np.testing.assert_allclose(np.sum(a * b, axis=1), 0.0,
                                       atol=1e-14)
        np.testing.assert_allclose(np.cross(frames.d1, frames.d2),
                                   frames.tangents, atol=1e-14)
        np.testing.assert_array_equal(frames.m1, frames.d1)


class TestTangents:
    def test_straight_rod(self):
        state, _, _ = build_default()
        t = geometry.compute_tangents(state.positions)
        np.testing.assert_allclose(t, [[1.0, 0.0, 0.0]] * 20, atol=0)

    def test_simple_directions(self):
        t = geometry.compute_tangents(np.array([[0.0, 0, 0], [0.0, 1, 0]]))
        np.testing.assert_allclose(t, [[0, 1, 0]], atol=0)
        t = geometry.compute_tangents(np.array([[0.0, 0, 0], [1.0, 1, 0]]))
        s = math.sqrt(2) / 2
        np.testing.assert_allclose(t, [[s, s, 0]], rtol=1e-15)

    def test_degenerate_edge_rejected(self):
        pts = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
        with pytest.raises(DegenerateEdgeError):
            geometry.compute_tangents(pts)


class TestTransport:
    def test_identity_transport(self):
        state, _, frames = build_default()
        new = geometry.time_parallel_transport(frames, frames.tangents,
                                               state.thetas)
        np.testing.assert_array_equal(new.d1, frames.d1)
        np.testing.assert_array_equal(new.d2, frames.d2)
        np.testing.assert_array_equal(new.ref_twist, frames.ref_twist)

    def test_quarter_turn_about_d1(self):
        # rotation axis is d1 itself, so d1 must come through unchanged
        # and d2 must match an independently applied Rodrigues rotation
        state, _, frames = build_default(n_nodes=3)
        angle = math.pi / 2
        new_tangents = frames.tangents.copy()
        for i in range(2):
            new_tangents[i] = rodrigues(frames.d1[i], angle,
                                        frames.tangents[i])
        new = geometry.time_parallel_transport(frames, new_tangents,
                                               state.thetas)
        for i in range(2):
            np.testing.assert_allclose(new.d1[i], frames.d1[i], atol=1e-12)
            np.testing.assert_allclose(
                new.d2[i], rodrigues(frames.d1[i], angle, frames.d2[i]),
                atol=1e-12)

    def test_orthonormality_over_many_random_transports(self, rng):
        state, _, frames = build_default(n_nodes=9)
        tangents = frames.tangents.copy()
        worst = 0.0
        for _ in range(10_000 // 8):
            axis = rng.standard_normal(3)
            axis /= np.linalg.norm(axis)
            angle = 0.2 * rng.standard_normal()
            for i in range(tangents.shape[0]):
                tangents[i] = rodrigues(axis, angle, tangents[i])
            frames = geometry.time_parallel_transport(frames, tangents,
                                                      state.thetas)
            for a, b in ((frames.d1, frames.d2), (frames.d1, tangents),
                         (frames.d2, tangents)):
                worst = max(worst, np.abs(np.sum(a * b, axis=1)).max())
            worst = max(worst, np.abs(
                np.linalg.norm(frames.d1, axis=1) - 1.0).max())
        assert worst < 1e-10

    def test_reference_twist_matches_frame_geometry(self, rng):
        # brute-force oracle: space-transport d1 across the joint and
        # measure the leftover angle to the next edge's d1
        state, _, frames = perturbed_rod(rng, n_nodes=9, pos_noise=0.05)
        for _ in range(5):
            state.positions[1:] += 0.02 * rng.standard_normal(
                (state.n_nodes - 1, 3))
            tangents = geometry.compute_tangents(state.positions)
            frames = geometry.time_parallel_transport(frames, tangents,
                                                      state.thetas)
            for i in range(1, tangents.shape[0]):
                t_prev, t_next = tangents[i - 1], tangents[i]
                axis = np.cross(t_prev, t_next)
                norm = np.linalg.norm(axis)
                if norm < 1e-12:
                    moved = frames.d1[i - 1]
                else:
                    angle = math.atan2(norm, np.dot(t_prev, t_next))
                    moved = rodrigues(axis / norm, angle, frames.d1[i - 1])
                # signed angle rotating the transported director onto d1
                raw = math.atan2(
                    np.dot(np.cross(moved, frames.d1[i]), t_next),
                    np.dot(moved, frames.d1[i]))
                diff = frames.ref_twist[i - 1] - raw
                wrapped = (diff + math.pi) % (2 * math.pi) - math.pi
                assert abs(wrapped) < 1e-9

    def test_antiparallel_tangent_rejected(self):
        state, _, frames = build_default(n_nodes=3)
        flipped = frames.tangents.copy()
        flipped[0] = -flipped[0]
        with pytest.raises(AntiparallelTangentError):
            geometry.time_parallel_transport(frames, flipped, state.thetas)


class TestCurvature:
    def test_straight_rod_zero(self):
        state, _, frames = build_default()
        kappa = geometry.material_curvatures(state, frames)
        np.testing.assert_array_equal(kappa, 0.0)

    def test_perpendicular_tangents_norm_two(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 1.0]])
        kb = geometry.curvature_binormals(geometry.compute_tangents(pts))
        assert np.linalg.norm(kb[0]) == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("phi_deg", [5.0, 30.0, 90.0])
    def test_arc_turning_angle_identity(self, phi_deg):
        phi = math.radians(phi_deg)
        pts = arc_positions(11, phi)
        kb = geometry.curvature_binormals(geometry.compute_tangents(pts))
        expected = 2.0 * math.tan(phi / 2.0)
        np.testing.assert_allclose(np.linalg.norm(kb, axis=1), expected,
                                   rtol=0, atol=1e-9)

    def test_uniform_theta_shift_preserves_norm(self, rng):
        state, rest, frames = perturbed_rod(rng, n_nodes=11)
        kappa = geometry.material_curvatures(state, frames)
        shifted = state.copy()
        shifted.thetas += 0.7
        frames2 = geometry.time_parallel_transport(
            frames, geometry.compute_tangents(shifted.positions),
            shifted.thetas)
        kappa2 = geometry.material_curvatures(shifted, frames2)
        np.testing.assert_allclose(np.sum(kappa ** 2, axis=1),
                                   np.sum(kappa2 ** 2, axis=1), rtol=1e-9)


class TestDofPacking:
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_pack_unpack_round_trip(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(3, 40))
        q = r.standard_normal(geometry.dof_count(n))
        positions, thetas = geometry.unpack_dofs(q)
        assert positions.shape == (n, 3) and thetas.shape == (n - 1,)
        np.testing.assert_array_equal(geometry.pack_dofs(positions, thetas),
                                      q)

    def test_interleaving_layout(self):
        q = np.arange(11, dtype=np.float64)  # 3 nodes
        positions, thetas = geometry.unpack_dofs(q)
        np.testing.assert_array_equal(positions[1], [4.0, 5.0, 6.0])
        np.testing.assert_array_equal(thetas, [3.0, 7.0])
