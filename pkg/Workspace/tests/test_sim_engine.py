"""Coupled right-hand side, integrators, sensing and the scenario loop"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from apf_controller import gravity_compensation
from sim_engine import (AdaptiveIntegrator, FixedStepIntegrator, SwarmPayloadModel,
                        agent_acceleration, assemble_rhs, equilibrium_state, linear_momentum,
                        mechanical_energy, rest_state, rk4_step, run_batch, run_scenario,
                        sense_neighbors, sense_obstacles)
from sim_types import StateLayout, StiffnessError, default_anchors, load_config
from swarm_analysis import time_series_digest

G = np.array([0.0, 0.0, 9.8])


def _derivative_parts(config, state, controls, wind=np.zeros(3)):
    layout = StateLayout(config.n, config.cable.elements)
    return layout.unpack(assemble_rhs(state, controls, wind, config))


class TestAgentAcceleration:
    def test_self_hover(self):
        accel = agent_acceleration(np.zeros(3), np.zeros(3), [0, 0, 1.3 * 9.8], 1.3, 0.2, G)
        np.testing.assert_allclose(accel, 0.0, atol=1e-12)

    def test_free_fall(self):
        np.testing.assert_array_equal(agent_acceleration(np.zeros(3), np.zeros(3), np.zeros(3),
                                                         1.3, 0.2, G), -G)

    def test_hover_against_top_link(self, mission_config):
        top_link = (20 / 7 + 2 * 0.003) * 9.8
        assert top_link == pytest.approx(28.06, abs=0.01)
        accel = agent_acceleration(np.zeros(3), [0, 0, -top_link],
                                   gravity_compensation(mission_config), 1.3, 0.2, G)
        np.testing.assert_allclose(accel, 0.0, atol=1e-12)

    def test_drag(self):
        accel = agent_acceleration([1.3, 0, 0], np.zeros(3), [0, 0, 1.3 * 9.8], 1.3, 0.2, G)
        np.testing.assert_allclose(accel, [-0.2, 0, 0], atol=1e-12)


class TestRightHandSide:
    def test_equilibrium_fixture_is_stationary(self, mission_config):
        state = equilibrium_state(mission_config)
        controls = np.tile(gravity_compensation(mission_config), (7, 1))
        rates = _derivative_parts(mission_config, state, controls)
        assert np.max(np.abs(rates.payload_velocity)) < 1e-9
        assert np.max(np.abs(rates.payload_angular_velocity)) < 1e-9
        assert np.max(np.abs(rates.agent_velocities)) < 1e-9
        assert np.max(np.abs(rates.cable_velocities)) < 1e-5
        np.testing.assert_array_equal(rates.payload_position, 0.0)
        np.testing.assert_array_equal(rates.body_axes, 0.0)

    def test_slack_state_free_falls(self, mission_config):
        state = rest_state(mission_config)
        rates = _derivative_parts(mission_config, state, np.zeros((7, 3)))
        np.testing.assert_array_equal(rates.payload_velocity, -G)
        np.testing.assert_array_equal(rates.agent_velocities, np.tile(-G, (7, 1)))
        np.testing.assert_array_equal(rates.cable_velocities, np.tile(-G, (7, 2, 1)))

    def test_wind_pushes_the_payload(self, mission_config):
        state = rest_state(mission_config)
        rates = _derivative_parts(mission_config, state, np.zeros((7, 3)), np.array([10.0, 0, 0]))
        np.testing.assert_allclose(rates.payload_velocity, [0.5, 0, -9.8])

    def test_internal_forces_conserve_momentum(self, rng):
        config = load_config(overrides={"environment": {"gravity": 0.0, "drag": 0.0}})
        state = equilibrium_state(config)
        state.agent_positions += rng.normal(scale=0.2, size=(7, 3))
        state.cable_positions += rng.normal(scale=0.2, size=(7, 2, 3))
        state.agent_velocities = rng.normal(size=(7, 3))
        state.cable_velocities = rng.normal(size=(7, 2, 3))
        state.payload_angular_velocity = np.array([0.05, -0.02, 0.1])
        rates = _derivative_parts(config, state, np.zeros((7, 3)))
        total = (config.payload.mass * rates.payload_velocity
                 + config.swarm.agent_mass * rates.agent_velocities.sum(axis=0)
                 + config.cable.element_mass * rates.cable_velocities.sum(axis=(0, 1)))
        np.testing.assert_allclose(total, 0.0, atol=1e-8)

    def test_wind_window(self):
        config = load_config(preset="case2")
        model = SwarmPayloadModel(config)
        np.testing.assert_array_equal(model.wind_force(49.99), [0, 0, 0])
        np.testing.assert_allclose(model.wind_force(50.25), [10, 10, 0])
        np.testing.assert_array_equal(model.wind_force(60.0), [0, 0, 0])


def _decay(t, y):
    return np.array([y[1], -4.0 * y[0] - 0.1 * y[1]])


class TestIntegrators:
    def test_rk4_is_fourth_order(self):
        a = np.array([[0.0, 1.0], [-4.0, -0.1]])
        y0 = np.array([1.0, 0.0])
        exact = expm(a * 2.0) @ y0
        errors = []
        for h in (0.02, 0.01):
            y = FixedStepIntegrator(h).advance(_decay, 0.0, y0, 2.0)
            errors.append(np.linalg.norm(y - exact))
        assert math.log2(errors[0] / errors[1]) == pytest.approx(4.0, abs=0.3)

    def test_rk4_free_fall(self):
        def fall(t, y):
            return np.array([y[1], -9.8])

        y = FixedStepIntegrator(0.01).advance(fall, 0.0, np.array([10.0, 0.0]), 1.0)
        assert 10.0 - y[0] == pytest.approx(4.9, abs=1e-9)

    def test_rk4_oscillator_period(self):
        def spring(t, y):
            return np.array([y[1], -y[0]])

        y = FixedStepIntegrator(1e-3).advance(spring, 0.0, np.array([1.0, 0.0]), 2 * math.pi)
        np.testing.assert_allclose(y, [1.0, 0.0], atol=1e-4)

    def test_single_rk4_step_matches_taylor(self):
        y = rk4_step(lambda t, v: -v, 0.0, np.array([1.0]), 0.1)
        assert y[0] == pytest.approx(1 - 0.1 + 0.005 - 0.1 ** 3 / 6 + 0.1 ** 4 / 24)

    def test_adaptive_accuracy_and_step_memory(self):
        integrator = AdaptiveIntegrator(1e-8, 1e-10, 1e-9)
        y = integrator.advance(lambda t, v: -v, 0.0, np.array([1.0]), 1.0)
        assert y[0] == pytest.approx(math.exp(-1.0), rel=1e-6)
        assert integrator.next_step > 0
        assert integrator.steps_taken > 0

    def test_step_underflow_is_a_stiffness_failure(self):
        def stiff(t, y):
            return np.array([y[1], -1e4 * y[0]])

        integrator = AdaptiveIntegrator(1e-6, 1e-8, min_step=0.5)
        with pytest.raises(StiffnessError) as info:
            integrator.advance(stiff, 0.0, np.array([1.0, 0.0]), 10.0)
        assert info.value.time < 10.0


class TestSensing:
    def test_neighbour_at_radius_is_excluded(self):
        positions = np.array([[0.0, 0, 0], [5.0, 0, 0], [4.999, 0, 0]])
        np.testing.assert_array_equal(sense_neighbors(0, positions, 5.0), [[4.999, 0, 0]])

    def test_self_is_excluded_and_order_kept(self):
        positions = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [0.5, 0, 0]])
        np.testing.assert_array_equal(sense_neighbors(1, positions, 1.5),
                                      [[0, 0, 0], [2, 0, 0], [0.5, 0, 0]])

    def test_ring_sees_two_neighbours(self):
        ring = default_anchors(7, 4.0, 10.0)
        for index in range(7):
            assert sense_neighbors(index, ring, 5.0).shape == (2, 3)

    def test_obstacles(self):
        assert sense_obstacles(np.zeros(3), np.zeros((0, 3)), 10.0).shape == (0, 3)
        obstacles = np.array([[6.0, 11.0, 10.0], [1.0, 1.0, 1.0]])
        np.testing.assert_array_equal(sense_obstacles(np.zeros(3), obstacles, 10.0), [[1, 1, 1]])


class TestScenarioLoop:
    def test_zero_duration_run(self):
        config = load_config(overrides={"scenario": {"total_time": 0.0}})
        log = run_scenario(config)
        assert len(log) == 1
        assert log.times[0] == 0.0
        np.testing.assert_array_equal(log.agent_positions[0], rest_state(config).agent_positions)

    def test_failure_zeroes_the_agent(self):
        config = load_config(preset="case3", overrides={
            "scenario": {"total_time": 0.1, "failure": {"agent": 1, "time": 0.05}}})
        log = run_scenario(config, fixed_step=True)
        np.testing.assert_allclose(log.times, [0.0, 0.05, 0.1])
        assert not log.agent_failed[0].any()
        assert log.agent_failed[1, 0] and log.agent_failed[2, 0]
        assert not log.agent_failed[2, 1:].any()
        np.testing.assert_array_equal(log.agent_controls[1:, 0], 0.0)
        assert np.all(log.agent_controls[1:, 1:, 2] > 0)
        assert [e["event"] for e in log.events] == ["agent_failure"]
        assert log.events[0]["time"] == 0.05

    def test_fixed_step_runs_are_identical(self):
        config = load_config(preset="hover", overrides={"scenario": {"total_time": 0.05}})
        first = run_scenario(config, fixed_step=True)
        second = run_scenario(config, fixed_step=True)
        assert time_series_digest(first) == time_series_digest(second)

    def test_batch_preserves_order(self):
        configs = [load_config(preset="hover", overrides={"scenario": {"total_time": t}})
                   for t in (0.0, 0.02)]
        logs = run_batch(configs, workers=1)
        assert [len(log) for log in logs] == [1, 1]
        assert logs[1].final_state.time == pytest.approx(0.02)

    def test_hover_fixture_holds_still(self):
        config = load_config(preset="hover", overrides={
            "scenario": {"total_time": 0.2, "initial_state": "equilibrium"}})
        log = run_scenario(config)
        assert np.max(np.abs(log.payload_position[-1])) < 1e-6
        assert np.max(np.abs(log.payload_omega)) < 1e-6

    def test_swarm_centre_heads_for_the_shifted_target(self, mission_config):
        model = SwarmPayloadModel(mission_config)
        state = rest_state(mission_config)
        rates = model.derivative(state, np.zeros((7, 3)), np.zeros(3))
        heading = model.target - state.swarm_center
        assert rates.swarm_center @ heading > 0
        assert model.target[2] > mission_config.goal[2]


class TestAudits:
    def test_momentum_is_conserved_without_gravity_or_drag(self):
        config = load_config(overrides={"environment": {"gravity": 0.0, "drag": 0.0},
                                        "controller": {"mode": "off"},
                                        "scenario": {"total_time": 1.0}})
        state = equilibrium_state(config)
        state.agent_velocities[0] = [0.3, 0.0, 0.5]
        state.payload_velocity = np.array([0.0, 0.1, 0.0])
        before = linear_momentum(state, config)
        log = run_scenario(config, initial=state)
        after = linear_momentum(log.final_state, config)
        np.testing.assert_allclose(after, before, atol=1e-9)

    def test_energy_is_conserved_without_dissipation(self, swung_chain):
        config = load_config(preset="hover", overrides={
            "cable": {"damping": 0.0}, "environment": {"drag": 0.0},
            "scenario": {"total_time": 1.0}})
        controls = np.tile(gravity_compensation(config), (7, 1))
        state = swung_chain(config)
        before = mechanical_energy(state, controls, config)
        excitation = before - mechanical_energy(equilibrium_state(config), controls, config)
        assert excitation > 1e-3

        log = run_scenario(config, initial=state)
        after = mechanical_energy(log.final_state, log.agent_controls[-1], config)
        assert abs(after - before) / excitation < 1e-3
