"""Cable link force kernel, anchor kinematics and chain accelerations"""

import numpy as np
import pytest
from scipy.optimize import brentq

from cable_dynamics import (CableChain, anchor_kinematics, cable_accelerations,
                            cable_potential_energy, element_force, hanging_chain_stretches,
                            link_forces, static_cable_elongation, static_chain_stretches,
                            tautness_gate)
from sim_types import CableConfig, DegenerateGeometryError

K_T = 10073.0
B_T = 0.1
L_FREE = 1.5
G = np.array([0.0, 0.0, 9.8])


def _random_taut_pair(rng):
    x_j = rng.uniform(-2, 2, size=3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    x_i = x_j + direction * (L_FREE + rng.uniform(0.01, 0.5))
    return x_i, x_j


class TestElementForce:
    def test_natural_length_gives_zero(self):
        force = element_force([0, 0, 1.5], [0, 0, 0], np.zeros(3), np.zeros(3), K_T, B_T, L_FREE)
        np.testing.assert_array_equal(force, [0, 0, 0])

    def test_slack_link_ignores_velocity(self):
        force = element_force([0, 0, 1.0], [0, 0, 0], [0, 0, 5.0], [0, 0, -3.0], K_T, B_T, L_FREE)
        np.testing.assert_array_equal(force, [0, 0, 0])

    def test_stretched_link(self):
        force = element_force([0, 0, 2.0], [0, 0, 0], np.zeros(3), np.zeros(3), K_T, B_T, L_FREE)
        np.testing.assert_allclose(force, [0, 0, -5036.5])

    def test_damping_acts_along_the_link(self):
        force = element_force([0, 0, 2.0], [0, 0, 0], [1.0, 0, 2.0], np.zeros(3), K_T, B_T, L_FREE)
        np.testing.assert_allclose(force, [0, 0, -(5036.5 + B_T * 2.0)])

    def test_coincident_points(self):
        with pytest.raises(DegenerateGeometryError):
            element_force([1, 1, 1], [1, 1, 1], np.zeros(3), np.zeros(3), K_T, B_T, L_FREE)

    def test_antisymmetry_is_exact(self, rng):
        for _ in range(50):
            x_i, x_j = _random_taut_pair(rng)
            v_i, v_j = rng.normal(size=3), rng.normal(size=3)
            forward = element_force(x_i, x_j, v_i, v_j, K_T, B_T, L_FREE)
            backward = element_force(x_j, x_i, v_j, v_i, K_T, B_T, L_FREE)
            np.testing.assert_array_equal(forward, -backward)

    def test_undamped_force_is_minus_gradient_of_spring_energy(self, rng):
        h = 1e-6

        def energy(x_i, x_j):
            extension = np.linalg.norm(x_i - x_j) - L_FREE
            return 0.5 * K_T * extension ** 2 * tautness_gate(extension)

        for _ in range(20):
            x_i, x_j = _random_taut_pair(rng)
            force = element_force(x_i, x_j, np.zeros(3), np.zeros(3), K_T, 0.0, L_FREE)
            gradient = np.array([(energy(x_i + h * e, x_j) - energy(x_i - h * e, x_j)) / (2 * h)
                                 for e in np.eye(3)])
            assert np.linalg.norm(force + gradient) / np.linalg.norm(force) < 1e-5

    def test_gate_is_a_step(self):
        np.testing.assert_array_equal(tautness_gate([-1.0, 0.0, 1e-300, 2.0]), [0, 0, 1, 1])


class TestLinkForces:
    def test_matches_scalar_kernel(self, rng):
        nodes = np.cumsum(rng.normal(scale=1.2, size=(3, 4, 3)), axis=1)
        velocities = rng.normal(size=(3, 4, 3))
        lower = link_forces(nodes, velocities, K_T, B_T, L_FREE)
        assert lower.shape == (3, 3, 3)
        for k in range(3):
            for j in range(3):
                expected = element_force(nodes[k, j], nodes[k, j + 1], velocities[k, j],
                                         velocities[k, j + 1], K_T, B_T, L_FREE)
                np.testing.assert_allclose(lower[k, j], expected, rtol=1e-12, atol=1e-9)

    def test_degenerate_link_reports_path(self):
        nodes = np.array([[[0, 0, 0], [0, 0, 1.5], [0, 0, 3.0]],
                          [[1, 0, 0], [1, 0, 1.5], [1, 0, 1.5]]], dtype=float)
        with pytest.raises(DegenerateGeometryError) as info:
            link_forces(nodes, np.zeros_like(nodes), K_T, B_T, L_FREE)
        assert info.value.agent == 2
        assert info.value.element == 1
        assert "agent 2" in str(info.value)


class TestAnchorKinematics:
    def test_static_anchor(self):
        position, velocity = anchor_kinematics(np.zeros(3), np.zeros(3), np.zeros(3), np.eye(3),
                                               [1, 0, 5])
        np.testing.assert_array_equal(position, [1, 0, 5])
        np.testing.assert_array_equal(velocity, [0, 0, 0])

    def test_circular_motion(self):
        _, velocity = anchor_kinematics(np.zeros(3), np.zeros(3), [0, 0, 1], np.eye(3), [1, 0, 0])
        np.testing.assert_allclose(velocity, [0, 1, 0])

    def test_translation_plus_spin(self):
        _, velocity = anchor_kinematics(np.zeros(3), [1, 0, 0], [0, 0, 2], np.eye(3), [0, 3, 5])
        np.testing.assert_allclose(velocity, [-5, 0, 0])

    def test_offset_is_rotated_into_inertial_frame(self):
        quarter = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        position, velocity = anchor_kinematics([1, 1, 1], np.zeros(3), [0, 0, 1], quarter,
                                               [1, 0, 0])
        np.testing.assert_allclose(position, [1, 2, 1])
        np.testing.assert_allclose(velocity, [-1, 0, 0])

    def test_ring_matches_single_anchors(self, rng):
        axes, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        ring = rng.normal(size=(5, 3))
        centre, speed, omega = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        positions, velocities = anchor_kinematics(centre, speed, omega, axes, ring)
        assert positions.shape == (5, 3)
        for k in range(5):
            position, velocity = anchor_kinematics(centre, speed, omega, axes, ring[k])
            np.testing.assert_allclose(positions[k], position, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(velocities[k], velocity, rtol=1e-12, atol=1e-12)


def _cable(**changes):
    values = dict(elements=2, element_mass=0.003, free_length=L_FREE, stiffness=K_T, damping=B_T)
    values.update(changes)
    return CableConfig(**values)


class TestCableAccelerations:
    def test_slack_chain_free_falls(self):
        chain = CableChain(1, np.array([[0, 0, 0.5], [0, 0, 1.0]]), np.zeros((2, 3)),
                           np.zeros(3))
        accelerations = cable_accelerations(chain, [0, 0, 1.5], np.zeros(3), np.zeros(3),
                                            np.zeros(3), _cable(), G)
        np.testing.assert_array_equal(accelerations, np.tile(-G, (2, 1)))

    def test_static_chain_balances(self):
        stretches = hanging_chain_stretches(20 / 7, 0.003, 2, K_T, 9.8)
        heights = np.cumsum(L_FREE + stretches)
        chain = CableChain(1, np.array([[0, 0, heights[0]], [0, 0, heights[1]]]),
                           np.zeros((2, 3)), np.zeros(3))
        accelerations = cable_accelerations(chain, [0, 0, heights[2]], np.zeros(3), np.zeros(3),
                                            np.zeros(3), _cable(), G)
        np.testing.assert_allclose(accelerations, 0.0, atol=1e-6)

    def test_single_element_couples_anchor_and_agent(self):
        chain = CableChain(1, np.array([[0, 0, 1.6]]), np.zeros((1, 3)), np.zeros(3))
        accelerations = cable_accelerations(chain, [0, 0, 3.0], np.zeros(3), np.zeros(3),
                                            np.zeros(3), _cable(elements=1), G)
        # lower link stretched by 0.1 pulls down, upper link slack
        np.testing.assert_allclose(accelerations[0], [0, 0, -K_T * 0.1 / 0.003 - 9.8])

    def test_degenerate_chain_names_agent(self):
        chain = CableChain(4, np.array([[0, 0, 1.5], [0, 0, 1.5]]), np.zeros((2, 3)), np.zeros(3))
        with pytest.raises(DegenerateGeometryError) as info:
            cable_accelerations(chain, [0, 0, 3.0], np.zeros(3), np.zeros(3), np.zeros(3),
                                _cable(), G)
        assert info.value.agent == 4
        assert info.value.element == 1

    def test_hanging_chain_matches_root_found_statics(self):
        """Two elements hang from a fixed top point with the anchor end detached"""
        m_t = 0.003
        top = np.array([0.0, 0.0, 10.0])

        def chain_for(upper, lower):
            s2 = top - [0, 0, L_FREE + upper]
            s1 = s2 - [0, 0, L_FREE + lower]
            anchor = s1 - [0, 0, 1.0]          # closer than l_free: slack
            return CableChain(1, np.array([s1, s2]), np.zeros((2, 3)), np.zeros(3)), anchor

        def accel(upper, lower):
            chain, anchor = chain_for(upper, lower)
            return cable_accelerations(chain, top, np.zeros(3), anchor, np.zeros(3), _cable(), G)

        def lower_for(upper):
            return brentq(lambda lower: accel(upper, lower)[0, 2], 1e-9, 0.01, xtol=1e-15)

        upper = brentq(lambda u: accel(u, lower_for(u))[1, 2], 1e-8, 0.01, xtol=1e-15)
        assert upper == pytest.approx(2 * m_t * 9.8 / K_T, rel=1e-6)
        expected = hanging_chain_stretches(0.0, m_t, 2, K_T, 9.8)
        assert expected[-1] == pytest.approx(upper, rel=1e-6)
        assert lower_for(upper) == pytest.approx(expected[1], rel=1e-6)


class TestStatics:
    def test_static_stretches_default_cable(self, mission_config):
        stretches = static_chain_stretches(mission_config)
        assert stretches.shape == (3,)
        assert stretches[0] == pytest.approx(20 / 7 * 9.8 / K_T)
        np.testing.assert_allclose(np.diff(stretches), 0.003 * 9.8 / K_T)
        assert static_cable_elongation(mission_config) == pytest.approx(0.008348, abs=1e-6)

    def test_elongation_close_to_series_spring_estimate(self, mission_config):
        estimate = (20 * 9.8 / 7) * 3 / K_T
        assert abs(static_cable_elongation(mission_config) - estimate) / estimate < 0.05

    def test_potential_energy(self):
        nodes = np.array([[[0, 0, 0], [0, 0, 1.0], [0, 0, 3.0]]])
        assert cable_potential_energy(nodes, K_T, L_FREE) == pytest.approx(0.5 * K_T * 0.25)
        slack = np.array([[[0, 0, 0], [0, 0, 1.0], [0, 0, 2.0]]])
        assert cable_potential_energy(slack, K_T, L_FREE) == 0.0
