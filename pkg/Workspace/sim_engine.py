#!/usr/bin/env python3
"""
Swarm Payload Simulator - time integration engine
Assembles the coupled payload / cable / agent right-hand side, advances it
between controller ticks with an explicit Runge-Kutta integrator, injects
wind and agent-failure events and records the trajectory log.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import RK45

from apf_controller import (DesiredAttitude, LocalPerception, control_input,
                            swarm_center_derivative, swarm_target)
from cable_dynamics import (anchor_kinematics, cable_potential_energy, element_accelerations,
                            link_forces, static_chain_stretches)
from payload_dynamics import (body_axes_derivative, measure_azimuth_elevation, orthonormalize,
                              payload_angular_accel, payload_translational_accel)
from sim_types import (ControllerState, NonFiniteStateError, SimConfig, StateLayout,
                       StiffnessError, SystemState)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Trajectory log
# ---------------------------------------------------------------------------

@dataclass
class TimeSeriesLog:
    """Uniformly sampled trajectory; angles are stored in degrees"""

    scenario: str
    times: np.ndarray                 # (N,)
    payload_position: np.ndarray      # (N, 3)
    payload_velocity: np.ndarray      # (N, 3)
    payload_omega: np.ndarray         # (N, 3)
    azimuth_deg: np.ndarray           # (N,)
    elevation_deg: np.ndarray         # (N,)
    anchor_centroid: np.ndarray       # (N, 3)
    swarm_center: np.ndarray          # (N, 3)
    wind_force: np.ndarray            # (N, 3)
    agent_positions: np.ndarray       # (N, n, 3)
    agent_controls: np.ndarray        # (N, n, 3)
    cable_vectors: np.ndarray         # (N, n, 3), agent minus anchor
    cable_tensions: np.ndarray        # (N, n), anchor link
    agent_failed: np.ndarray          # (N, n) bool
    events: List[Dict] = field(default_factory=list)
    final_state: Optional[SystemState] = None

    @property
    def n(self) -> int:
        return self.agent_positions.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    @classmethod
    def empty(cls, scenario: str, n: int) -> "TimeSeriesLog":
        return cls(scenario=scenario, times=np.zeros(0), payload_position=np.zeros((0, 3)),
                   payload_velocity=np.zeros((0, 3)), payload_omega=np.zeros((0, 3)),
                   azimuth_deg=np.zeros(0), elevation_deg=np.zeros(0),
                   anchor_centroid=np.zeros((0, 3)), swarm_center=np.zeros((0, 3)),
                   wind_force=np.zeros((0, 3)), agent_positions=np.zeros((0, n, 3)),
                   agent_controls=np.zeros((0, n, 3)), cable_vectors=np.zeros((0, n, 3)),
                   cable_tensions=np.zeros((0, n)), agent_failed=np.zeros((0, n), dtype=bool))


class TimeSeriesRecorder:
    """Collects samples during a run and freezes them into a TimeSeriesLog"""

    def __init__(self, scenario: str, n: int):
        self.scenario = scenario
        self.n = n
        self.rows: Dict[str, list] = {name: [] for name in (
            "times", "payload_position", "payload_velocity", "payload_omega", "azimuth_deg",
            "elevation_deg", "anchor_centroid", "swarm_center", "wind_force", "agent_positions",
            "agent_controls", "cable_vectors", "cable_tensions", "agent_failed")}
        self.events: List[Dict] = []

    def add_event(self, time_s: float, name: str, detail: str = ""):
        self.events.append({"time": float(time_s), "event": name, "detail": detail})

    def sample(self, **values):
        for name, value in values.items():
            self.rows[name].append(value)

    def build(self, final_state: Optional[SystemState]) -> TimeSeriesLog:
        if not self.rows["times"]:
            log = TimeSeriesLog.empty(self.scenario, self.n)
        else:
            arrays = {name: np.array(values) for name, values in self.rows.items()}
            arrays["agent_failed"] = arrays["agent_failed"].astype(bool)
            log = TimeSeriesLog(scenario=self.scenario, **arrays)
        log.events = list(self.events)
        log.final_state = final_state
        return log


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

def agent_acceleration(velocity, cable_force, control, mass: float, drag: float,
                       gravity_vector) -> np.ndarray:
    """r_k'' = (-c v_k + f_top + u_k) / m - g; works row-wise on (n, 3) inputs"""
    return (-drag * np.asarray(velocity, dtype=float) + cable_force + control) / mass \
        - gravity_vector


class SwarmPayloadModel:
    """Continuous plant for one configuration"""

    def __init__(self, config: SimConfig):
        self.config = config
        self.n = config.n
        self.elements = config.cable.elements
        self.layout = StateLayout(self.n, self.elements)
        self.anchors_body = config.anchors_body
        self.gravity_vector = config.gravity_vector
        self.inertia = config.inertia_matrix
        self.wind = config.scenario.wind
        self.target = swarm_target(config)

    def wind_force(self, t: float) -> np.ndarray:
        wind = self.wind
        if wind is None or not wind.start <= t < wind.end:
            return np.zeros(3)
        phase = 2.0 * math.pi * wind.frequency * (t - wind.start)
        return np.asarray(wind.amplitude, dtype=float) * math.sin(phase)

    def anchor_states(self, state: SystemState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Anchor offsets B c_k, inertial positions and velocities, each (n, 3)"""
        positions, velocities = anchor_kinematics(state.payload_position, state.payload_velocity,
                                                  state.payload_angular_velocity,
                                                  state.body_axes, self.anchors_body)
        return positions - state.payload_position, positions, velocities

    def chain_nodes(self, state: SystemState, anchor_positions: np.ndarray,
                    anchor_velocities: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        nodes = np.concatenate([anchor_positions[:, None], state.cable_positions,
                                state.agent_positions[:, None]], axis=1)
        velocities = np.concatenate([anchor_velocities[:, None], state.cable_velocities,
                                     state.agent_velocities[:, None]], axis=1)
        return nodes, velocities

    def cable_link_forces(self, state: SystemState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        offsets, anchor_positions, anchor_velocities = self.anchor_states(state)
        nodes, velocities = self.chain_nodes(state, anchor_positions, anchor_velocities)
        cable = self.config.cable
        lower = link_forces(nodes, velocities, cable.stiffness, cable.damping, cable.free_length)
        return lower, offsets, anchor_positions

    def assemble_rhs(self, state: SystemState, controls: np.ndarray,
                     external_force: np.ndarray) -> np.ndarray:
        """State derivative written straight into StateLayout order"""
        config = self.config
        lower, offsets, _ = self.cable_link_forces(state)
        payload_forces = lower[:, 0]
        agent_cable_forces = -lower[:, -1]
        slices = self.layout.slices
        out = np.empty(self.layout.size)

        out[slices["payload_position"]] = state.payload_velocity
        out[slices["payload_velocity"]] = payload_translational_accel(
            state.payload_velocity, payload_forces, external_force, config.payload.mass,
            config.environment.drag, self.gravity_vector)
        out[slices["payload_angular_velocity"]] = payload_angular_accel(
            state.payload_angular_velocity, payload_forces, offsets, self.inertia)
        out[slices["body_axes"]] = body_axes_derivative(
            state.body_axes, state.payload_angular_velocity).ravel()
        out[slices["agent_positions"]] = state.agent_velocities.ravel()
        out[slices["agent_velocities"]] = agent_acceleration(
            state.agent_velocities, agent_cable_forces, controls, config.swarm.agent_mass,
            config.environment.drag, self.gravity_vector).ravel()
        out[slices["cable_positions"]] = state.cable_velocities.ravel()
        out[slices["cable_velocities"]] = element_accelerations(
            lower, config.cable.element_mass, self.gravity_vector).ravel()
        out[slices["swarm_center"]] = swarm_center_derivative(
            state.swarm_center, self.target, config.controller.center_gain,
            config.controller.center_scale)
        return out

    def derivative(self, state: SystemState, controls: np.ndarray,
                   external_force: np.ndarray) -> SystemState:
        return self.layout.unpack(self.assemble_rhs(state, controls, external_force), state.time)

    def rhs(self, t: float, y: np.ndarray, controls: np.ndarray) -> np.ndarray:
        state = self.layout.unpack(y, t, copy_arrays=False)
        return self.assemble_rhs(state, controls, self.wind_force(t))


def assemble_rhs(state: SystemState, controls: np.ndarray, external_force: np.ndarray,
                 config: SimConfig) -> np.ndarray:
    """State derivative in StateLayout order"""
    return SwarmPayloadModel(config).assemble_rhs(state, controls, external_force)


# ---------------------------------------------------------------------------
# Integrators
# ---------------------------------------------------------------------------

def rk4_step(fun: Callable, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step"""
    k1 = fun(t, y)
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class FixedStepIntegrator:
    def __init__(self, step: float):
        self.step = step

    def advance(self, fun: Callable, t0: float, y0: np.ndarray, t1: float) -> np.ndarray:
        count = max(1, int(round((t1 - t0) / self.step)))
        h = (t1 - t0) / count
        y = y0
        for index in range(count):
            y = rk4_step(fun, t0 + index * h, y, h)
        return y


class AdaptiveIntegrator:
    """
    Dormand-Prince 5(4) stepping across one controller interval at a time.
    The step size proposed before the interval end clipped it seeds the next
    interval.
    """

    def __init__(self, rtol: float, atol: float, min_step: float,
                 max_step: Optional[float] = None):
        self.rtol = rtol
        self.atol = atol
        self.min_step = min_step
        self.max_step = np.inf if max_step is None else max_step
        self.next_step: Optional[float] = None
        self.steps_taken = 0

    def advance(self, fun: Callable, t0: float, y0: np.ndarray, t1: float) -> np.ndarray:
        first_step = None if self.next_step is None else min(self.next_step, t1 - t0)
        solver = RK45(fun, t0, y0, t1, rtol=self.rtol, atol=self.atol,
                      max_step=self.max_step, first_step=first_step)
        proposed = None
        while solver.status == "running":
            message = solver.step()
            self.steps_taken += 1
            if solver.status == "failed":
                raise StiffnessError(f"adaptive integrator failed: {message}", time=solver.t)
            step_size = solver.step_size or 0.0
            if solver.status == "running":
                if step_size < self.min_step:
                    raise StiffnessError(f"step size {step_size:.3e}s fell below "
                                         f"{self.min_step:.1e}s", time=solver.t)
                proposed = solver.h_abs
        if proposed is None:
            # one step covered the interval
            proposed = max(solver.h_abs, self.next_step or 0.0)
        self.next_step = proposed
        return solver.y


def build_integrator(config: SimConfig, fixed_step: bool = False):
    settings = config.integrator
    if fixed_step or settings.mode == "fixed":
        return FixedStepIntegrator(settings.fixed_step)
    return AdaptiveIntegrator(settings.rtol, settings.atol, settings.min_step, settings.max_step)


# ---------------------------------------------------------------------------
# Sensing
# ---------------------------------------------------------------------------

def sense_neighbors(index: int, agent_positions: np.ndarray, radius: float) -> np.ndarray:
    """Positions of agents strictly closer than radius to agent index (0-based), by index"""
    distances = np.linalg.norm(agent_positions - agent_positions[index], axis=1)
    mask = distances < radius
    mask[index] = False
    return agent_positions[mask]


def sense_obstacles(position: np.ndarray, obstacles: np.ndarray, radius: float) -> np.ndarray:
    obstacles = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    if obstacles.shape[0] == 0:
        return obstacles
    distances = np.linalg.norm(obstacles - position, axis=1)
    return obstacles[distances < radius]


# ---------------------------------------------------------------------------
# Initial states and audits
# ---------------------------------------------------------------------------

def _stacked_chain_state(config: SimConfig, link_lengths: np.ndarray) -> SystemState:
    n = config.n
    anchors = config.anchors_body
    heights = np.cumsum(link_lengths)
    cable_positions = anchors[:, None, :] + heights[None, :-1, None] * np.array([0.0, 0.0, 1.0])
    agent_positions = anchors + np.array([0.0, 0.0, heights[-1]])
    return SystemState(
        payload_position=np.zeros(3),
        payload_velocity=np.zeros(3),
        payload_angular_velocity=np.zeros(3),
        body_axes=np.eye(3),
        agent_positions=agent_positions,
        agent_velocities=np.zeros((n, 3)),
        cable_positions=cable_positions,
        cable_velocities=np.zeros((n, config.cable.elements, 3)),
        swarm_center=anchors.mean(axis=0),
        time=0.0,
    )


def rest_state(config: SimConfig) -> SystemState:
    """Payload at the origin, cables vertical at natural length, everything at rest"""
    links = np.full(config.cable.elements + 1, config.cable.free_length)
    return _stacked_chain_state(config, links)


def equilibrium_state(config: SimConfig) -> SystemState:
    """Hover fixture: cables vertical and stretched by the exact static chain load"""
    links = config.cable.free_length + static_chain_stretches(config)
    return _stacked_chain_state(config, links)


def initial_state(config: SimConfig) -> SystemState:
    if config.scenario.initial_state == "equilibrium":
        return equilibrium_state(config)
    return rest_state(config)


def linear_momentum(state: SystemState, config: SimConfig) -> np.ndarray:
    return (config.payload.mass * state.payload_velocity
            + config.swarm.agent_mass * state.agent_velocities.sum(axis=0)
            + config.cable.element_mass * state.cable_velocities.sum(axis=(0, 1)))


def mechanical_energy(state: SystemState, controls: np.ndarray, config: SimConfig) -> float:
    """Kinetic + gravitational + taut-spring energy minus the work potential of constant controls"""
    model = SwarmPayloadModel(config)
    m_p, m, m_t = config.payload.mass, config.swarm.agent_mass, config.cable.element_mass
    omega = state.payload_angular_velocity
    kinetic = 0.5 * (m_p * state.payload_velocity @ state.payload_velocity
                     + omega @ model.inertia @ omega
                     + m * np.sum(state.agent_velocities ** 2)
                     + m_t * np.sum(state.cable_velocities ** 2))
    g = config.environment.gravity
    gravitational = g * (m_p * state.payload_position[2] + m * np.sum(state.agent_positions[:, 2])
                         + m_t * np.sum(state.cable_positions[..., 2]))
    _, anchor_positions, anchor_velocities = model.anchor_states(state)
    nodes, _ = model.chain_nodes(state, anchor_positions, anchor_velocities)
    elastic = cable_potential_energy(nodes, config.cable.stiffness, config.cable.free_length)
    control_work = float(np.sum(np.asarray(controls) * state.agent_positions))
    return float(kinetic + gravitational + elastic - control_work)


# ---------------------------------------------------------------------------
# Scenario loop
# ---------------------------------------------------------------------------

class ScenarioRunner:
    """sense -> control tick -> integrate to next tick -> events -> orthonormalize -> log"""

    def __init__(self, config: SimConfig, fixed_step: bool = False,
                 initial: Optional[SystemState] = None):
        self.config = config
        self.model = SwarmPayloadModel(config)
        self.layout = self.model.layout
        self.integrator = build_integrator(config, fixed_step)
        self.controller_state = ControllerState.fresh(config.n)
        self.attitude = DesiredAttitude.from_config(config) \
            if config.controller.mode == "full" else None
        self.initial = (initial if initial is not None else initial_state(config)).copy()
        self.obstacles = config.obstacles
        self.target = self.model.target
        self.recorder = TimeSeriesRecorder(config.scenario.name, config.n)
        self._wind_marks = set()

    def compute_controls(self, state: SystemState) -> np.ndarray:
        controller = self.config.controller
        positions = state.agent_positions
        controls = np.zeros((self.config.n, 3))
        for index, record in enumerate(self.controller_state.agents):
            perception = LocalPerception(
                neighbors=sense_neighbors(index, positions, controller.neighbor_radius),
                obstacles=sense_obstacles(positions[index], self.obstacles,
                                          controller.obstacle_radius),
                swarm_center=state.swarm_center.copy(),
                target=self.target,
            )
            controls[index] = control_input(positions[index], perception, record, self.config,
                                            self.attitude)
        return controls

    def apply_events(self, t: float):
        failure = self.config.scenario.failure
        if failure is not None and t >= failure.time - 1e-9:
            record = self.controller_state.agents[failure.agent - 1]
            if not record.failed:
                record.failed = True
                self.recorder.add_event(failure.time, "agent_failure", f"agent {failure.agent}")
                logger.warning(f"⚠ Agent {failure.agent} lost control at t={t:.2f}s")
        wind = self.config.scenario.wind
        if wind is not None:
            for name, mark in (("wind_start", wind.start), ("wind_end", wind.end)):
                if name not in self._wind_marks and t >= mark - 1e-9:
                    self._wind_marks.add(name)
                    self.recorder.add_event(mark, name, f"amplitude {list(wind.amplitude)} N")
                    logger.info(f"Wind event {name} at t={mark:.2f}s")

    def record(self, t: float, state: SystemState, controls: np.ndarray):
        lower, _, anchor_positions = self.model.cable_link_forces(state)
        azimuth, elevation = measure_azimuth_elevation(state.body_axes)
        self.recorder.sample(
            times=t,
            payload_position=state.payload_position.copy(),
            payload_velocity=state.payload_velocity.copy(),
            payload_omega=state.payload_angular_velocity.copy(),
            azimuth_deg=math.degrees(azimuth),
            elevation_deg=math.degrees(elevation),
            anchor_centroid=anchor_positions.mean(axis=0),
            swarm_center=state.swarm_center.copy(),
            wind_force=self.model.wind_force(t),
            agent_positions=state.agent_positions.copy(),
            agent_controls=np.array(controls, dtype=float),
            cable_vectors=state.agent_positions - anchor_positions,
            cable_tensions=np.linalg.norm(lower[:, 0], axis=1),
            agent_failed=self.controller_state.failed_mask,
        )

    def run(self) -> TimeSeriesLog:
        config = self.config
        period = config.controller.period
        ticks = int(round(config.scenario.total_time / period))
        log_every = max(1, int(round(config.scenario.log_period / period)))
        layout = self.layout
        body_slice = layout.slices["body_axes"]

        logger.info(f"Running scenario '{config.scenario.name}': {ticks} ticks of {period}s, "
                    f"{type(self.integrator).__name__}")
        started = time.perf_counter()
        y = layout.pack(self.initial)
        controls = np.zeros((config.n, 3))

        for tick in range(ticks + 1):
            t = tick * period
            state = layout.unpack(y, t)
            self.apply_events(t)
            if tick < ticks or tick == 0:
                controls = self.compute_controls(state)
            if tick % log_every == 0:
                self.record(t, state, controls)
            if tick == ticks:
                break

            held = controls.copy()
            y_next = self.integrator.advance(lambda s, v: self.model.rhs(s, v, held),
                                             t, y, t + period)
            if not np.all(np.isfinite(y_next)):
                logger.error(f"✗ Non-finite state after t={t:.4f}s")
                raise NonFiniteStateError("state became non-finite", last_good_time=t)
            y_next = np.array(y_next, dtype=float)
            y_next[body_slice] = orthonormalize(y_next[body_slice].reshape(3, 3)).ravel()
            y = y_next

            if tick % 1000 == 0:
                logger.debug(f"t={t:.2f}s payload={np.round(state.payload_position, 3)}")

        final_state = layout.unpack(y, ticks * period)
        log = self.recorder.build(final_state)
        elapsed = time.perf_counter() - started
        logger.info(f"✓ Scenario '{config.scenario.name}' finished: {len(log)} samples "
                    f"in {elapsed:.1f}s")
        return log


def run_scenario(config: SimConfig, fixed_step: bool = False,
                 initial: Optional[SystemState] = None) -> TimeSeriesLog:
    return ScenarioRunner(config, fixed_step=fixed_step, initial=initial).run()


def _run_one(job: Tuple[SimConfig, bool]) -> TimeSeriesLog:
    config, fixed_step = job
    return run_scenario(config, fixed_step=fixed_step)


def run_batch(configs: Sequence[SimConfig], workers: int = 1,
              fixed_step: bool = False) -> List[TimeSeriesLog]:
    """Independent whole runs, optionally in a process pool; order matches configs"""
    jobs = [(config, fixed_step) for config in configs]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(job) for job in jobs]
    logger.info(f"Running {len(jobs)} scenarios on {workers} worker processes")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
