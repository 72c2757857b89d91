#!/usr/bin/env python3
"""
Swarm Payload Simulator - shared types
Configuration models, scenario presets, the flat state-vector layout,
inertial/body frame transforms and the simulator's error types
"""

import copy
import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.spatial import Delaunay, QhullError

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"
DEFAULT_CONFIG_PATH = CONFIG_DIR / "default.yaml"

Vector3 = Tuple[float, float, float]


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class SimError(Exception):
    """Base class for every failure the simulator reports"""

    code = "SIM_ERROR"

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


class ConfigErrorCode(str, Enum):
    UNKNOWN_KEY = "UNKNOWN_KEY"
    INVALID_VALUE = "INVALID_VALUE"
    UNKNOWN_PRESET = "UNKNOWN_PRESET"
    UNREADABLE_FILE = "UNREADABLE_FILE"
    SWARM_TOO_SMALL = "SWARM_TOO_SMALL"
    NO_CABLE_ELEMENTS = "NO_CABLE_ELEMENTS"
    NON_POSITIVE_PARAMETER = "NON_POSITIVE_PARAMETER"
    NEGATIVE_PARAMETER = "NEGATIVE_PARAMETER"
    ANCHOR_COUNT_MISMATCH = "ANCHOR_COUNT_MISMATCH"
    ANCHORS_NOT_COPLANAR = "ANCHORS_NOT_COPLANAR"
    COM_OUTSIDE_ANCHORS = "COM_OUTSIDE_ANCHORS"
    ANCHOR_OUTSIDE_PAYLOAD = "ANCHOR_OUTSIDE_PAYLOAD"
    ATTITUDE_INFEASIBLE = "ATTITUDE_INFEASIBLE"
    BAD_WIND_WINDOW = "BAD_WIND_WINDOW"
    BAD_FAILURE_INDEX = "BAD_FAILURE_INDEX"
    BAD_INTEGRATOR_SETTINGS = "BAD_INTEGRATOR_SETTINGS"


class ConfigError(SimError):
    code = "CONFIG_ERROR"

    def __init__(self, message: str, code: ConfigErrorCode):
        super().__init__(message, code.value)
        self.error_code = code


class DegenerateGeometryError(SimError):
    """Two points that define a force direction coincide"""

    code = "DEGENERATE_GEOMETRY"

    def __init__(self, message: str, agent: Optional[int] = None, element: Optional[int] = None):
        path = []
        if agent is not None:
            path.append(f"agent {agent}")
        if element is not None:
            path.append(f"element {element}")
        if path:
            message = f"{message} ({', '.join(path)})"
        super().__init__(message)
        self.agent = agent
        self.element = element


class AttitudeInfeasibleError(SimError):
    code = "ATTITUDE_INFEASIBLE"


class IntegrityError(SimError):
    code = "INTEGRITY"


class StiffnessError(SimError):
    code = "STIFFNESS"

    def __init__(self, message: str, time: Optional[float] = None):
        if time is not None:
            message = f"{message} at t={time:.6f}s"
        super().__init__(message)
        self.time = time


class NonFiniteStateError(SimError):
    code = "NON_FINITE_STATE"

    def __init__(self, message: str, last_good_time: float):
        super().__init__(f"{message} (last good time t={last_good_time:.6f}s)")
        self.last_good_time = last_good_time


class SlackEquilibriumError(SimError):
    code = "SLACK_EQUILIBRIUM"


class NotSteadyError(SimError):
    code = "NOT_STEADY"

    def __init__(self, message: str, speeds: Dict[str, float]):
        detail = ", ".join(f"{name}={value:.3e}" for name, value in speeds.items())
        super().__init__(f"{message}: {detail}")
        self.speeds = speeds


class OutputError(SimError):
    code = "OUTPUT"


# ---------------------------------------------------------------------------
# Configuration models
# ---------------------------------------------------------------------------

class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PayloadConfig(StrictModel):
    mass: float = 20.0
    inertia: Vector3 = (291.67, 291.67, 250.0)
    radius: float = 5.0
    length: float = 10.0


class SwarmConfig(StrictModel):
    size: int = 7
    agent_mass: float = 1.3
    anchor_radius: float = 4.0
    anchors: Optional[List[Vector3]] = None


class CableConfig(StrictModel):
    elements: int = 2
    element_mass: float = 0.003
    free_length: float = 1.5
    stiffness: float = 10073.0
    damping: float = 0.1


class ControllerConfig(StrictModel):
    mode: Literal["full", "gravity_only", "off"] = "full"
    gravity_compensation: Literal["full", "simplified"] = "full"
    goal: Vector3 = (15.0, 15.0, 10.0)
    goal_reference: Literal["payload", "anchors"] = "payload"
    desired_azimuth_deg: float = -60.0
    desired_elevation_deg: float = 60.0
    transport_beta: float = 2.0
    center_gain: Vector3 = (2.0, 2.0, 20.0)
    center_scale: float = 5.0
    repulsion_gain: float = 0.1
    repulsion_scale: float = 1.0
    obstacle_gain: float = 500.0
    obstacle_scale: float = 3.0
    altitude_gain: float = 1.0
    kp: Vector3 = (2.0, 2.0, 4.0)
    ki: Vector3 = (0.0, 0.0, 0.5)
    kd: Vector3 = (10.0, 10.0, 8.0)
    integral_limit: float = 200.0
    neighbor_radius: float = 5.0
    obstacle_radius: float = 10.0
    period: float = 0.01
    min_normal_z: float = 0.1


class EnvironmentConfig(StrictModel):
    gravity: float = 9.8
    drag: float = 0.2
    obstacles: List[Vector3] = []


class WindConfig(StrictModel):
    start: float = 50.0
    end: float = 60.0
    amplitude: Vector3 = (10.0, 10.0, 0.0)
    frequency: float = 1.0


class FailureConfig(StrictModel):
    agent: int = 1
    time: float = 10.0


class AcceptanceConfig(StrictModel):
    """Tolerances are implementation-chosen; the source results are figures only"""

    horizontal_tolerance: float = 0.5
    angle_tolerance_deg: float = 5.0
    terminal_omega: float = 0.01
    min_obstacle_distance: Optional[float] = 1.0
    wind_recovery_time: Optional[float] = None


class ScenarioConfig(StrictModel):
    name: str = "default"
    total_time: float = 120.0
    log_period: float = 0.05
    initial_state: Literal["rest", "equilibrium"] = "rest"
    wind: Optional[WindConfig] = None
    failure: Optional[FailureConfig] = None
    acceptance: Optional[AcceptanceConfig] = None


class IntegratorConfig(StrictModel):
    mode: Literal["adaptive", "fixed"] = "fixed"
    rtol: float = 1e-6
    atol: float = 1e-8
    fixed_step: float = 2.5e-4
    min_step: float = 1e-9
    max_step: Optional[float] = None


class SimConfig(StrictModel):
    payload: PayloadConfig = PayloadConfig()
    swarm: SwarmConfig = SwarmConfig()
    cable: CableConfig = CableConfig()
    controller: ControllerConfig = ControllerConfig()
    environment: EnvironmentConfig = EnvironmentConfig()
    scenario: ScenarioConfig = ScenarioConfig()
    integrator: IntegratorConfig = IntegratorConfig()

    # Derived quantities ----------------------------------------------------

    @property
    def n(self) -> int:
        return self.swarm.size

    @property
    def cable_length(self) -> float:
        """Total natural cable length L = l_free * (t_n + 1)"""
        return self.cable.free_length * (self.cable.elements + 1)

    @property
    def desired_azimuth(self) -> float:
        return math.radians(self.controller.desired_azimuth_deg)

    @property
    def desired_elevation(self) -> float:
        return math.radians(self.controller.desired_elevation_deg)

    @property
    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.environment.gravity])

    @property
    def inertia_matrix(self) -> np.ndarray:
        return np.diag(np.asarray(self.payload.inertia, dtype=float))

    @property
    def goal(self) -> np.ndarray:
        return np.asarray(self.controller.goal, dtype=float)

    @property
    def obstacles(self) -> np.ndarray:
        return np.asarray(self.environment.obstacles, dtype=float).reshape(-1, 3)

    @property
    def anchors_body(self) -> np.ndarray:
        if self.swarm.anchors is not None:
            return np.asarray(self.swarm.anchors, dtype=float).reshape(-1, 3)
        return default_anchors(self.n, self.swarm.anchor_radius, 0.5 * self.payload.length)

    # Invariants --------------------------------------------------------------

    def check_invariants(self) -> "SimConfig":
        """Raise ConfigError with a distinct code for the first violated invariant"""
        if self.n < 3:
            raise ConfigError(f"swarm size must be at least 3, got {self.n}",
                              ConfigErrorCode.SWARM_TOO_SMALL)
        if self.cable.elements < 1:
            raise ConfigError(f"cable needs at least one element, got {self.cable.elements}",
                              ConfigErrorCode.NO_CABLE_ELEMENTS)

        positive = {
            "payload.mass": self.payload.mass,
            "payload.radius": self.payload.radius,
            "swarm.agent_mass": self.swarm.agent_mass,
            "cable.element_mass": self.cable.element_mass,
            "cable.free_length": self.cable.free_length,
            "cable.stiffness": self.cable.stiffness,
            "controller.center_scale": self.controller.center_scale,
            "controller.repulsion_scale": self.controller.repulsion_scale,
            "controller.obstacle_scale": self.controller.obstacle_scale,
            "controller.period": self.controller.period,
            "controller.neighbor_radius": self.controller.neighbor_radius,
            "controller.obstacle_radius": self.controller.obstacle_radius,
            "scenario.log_period": self.scenario.log_period,
        }
        for index, value in enumerate(self.payload.inertia):
            positive[f"payload.inertia[{index}]"] = value
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value}",
                                  ConfigErrorCode.NON_POSITIVE_PARAMETER)

        non_negative = {
            "cable.damping": self.cable.damping,
            "environment.drag": self.environment.drag,
            "environment.gravity": self.environment.gravity,
            "scenario.total_time": self.scenario.total_time,
            "controller.integral_limit": self.controller.integral_limit,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ConfigError(f"{name} must not be negative, got {value}",
                                  ConfigErrorCode.NEGATIVE_PARAMETER)

        anchors = self.anchors_body
        if anchors.shape[0] != self.n:
            raise ConfigError(f"expected {self.n} anchors, got {anchors.shape[0]}",
                              ConfigErrorCode.ANCHOR_COUNT_MISMATCH)
        if np.ptp(anchors[:, 2]) > 1e-9:
            raise ConfigError("anchors must share a common body-frame plane coordinate",
                              ConfigErrorCode.ANCHORS_NOT_COPLANAR)
        if not _origin_inside(anchors[:, :2]):
            raise ConfigError("payload centre of mass lies outside the anchor polygon",
                              ConfigErrorCode.COM_OUTSIDE_ANCHORS)
        radial = np.hypot(anchors[:, 0], anchors[:, 1])
        if np.any(radial >= self.payload.radius):
            raise ConfigError(
                f"anchor at radius {radial.max():.3f} m does not fit inside the payload "
                f"radius {self.payload.radius} m", ConfigErrorCode.ANCHOR_OUTSIDE_PAYLOAD)

        if abs(math.sin(self.desired_elevation)) < self.controller.min_normal_z:
            raise ConfigError(
                f"desired elevation {self.controller.desired_elevation_deg} deg leaves "
                f"|n_z| below {self.controller.min_normal_z}",
                ConfigErrorCode.ATTITUDE_INFEASIBLE)

        wind = self.scenario.wind
        if wind is not None and (wind.start >= wind.end or wind.frequency < 0):
            raise ConfigError(f"wind window [{wind.start}, {wind.end}] is invalid",
                              ConfigErrorCode.BAD_WIND_WINDOW)

        failure = self.scenario.failure
        if failure is not None and not 1 <= failure.agent <= self.n:
            raise ConfigError(f"failure agent {failure.agent} outside [1, {self.n}]",
                              ConfigErrorCode.BAD_FAILURE_INDEX)

        integrator = self.integrator
        steps_ok = (integrator.rtol > 0 and integrator.atol > 0 and integrator.min_step > 0
                    and 0 < integrator.fixed_step <= self.controller.period
                    and self.scenario.log_period >= self.controller.period)
        if integrator.max_step is not None and integrator.max_step <= 0:
            steps_ok = False
        if not steps_ok:
            raise ConfigError("integrator/logging step settings are inconsistent",
                              ConfigErrorCode.BAD_INTEGRATOR_SETTINGS)
        return self


def default_anchors(n: int, radius: float, height: float) -> np.ndarray:
    """Evenly spaced ring c_k = (r cos(2 pi k/n), r sin(2 pi k/n), h), k = 1..n"""
    k = np.arange(1, n + 1)
    angles = 2.0 * np.pi * k / n
    return np.column_stack([radius * np.cos(angles), radius * np.sin(angles),
                            np.full(n, float(height))])


def _origin_inside(points_xy: np.ndarray) -> bool:
    try:
        hull = Delaunay(points_xy)
    except (QhullError, ValueError):
        return False
    return bool(hull.find_simplex(np.zeros((1, 2)))[0] >= 0)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

SCENARIO_PRESETS: Dict[str, Dict[str, Any]] = {
    "case1": {
        "scenario": {"name": "case1"},
    },
    "case2": {
        "environment": {"obstacles": []},
        "scenario": {
            "name": "case2",
            "wind": {"start": 50.0, "end": 60.0, "amplitude": [10.0, 10.0, 0.0], "frequency": 1.0},
            "acceptance": {"min_obstacle_distance": None, "wind_recovery_time": 20.0},
        },
    },
    "case3": {
        "environment": {"obstacles": []},
        "scenario": {
            "name": "case3",
            "failure": {"agent": 1, "time": 10.0},
            "acceptance": {"horizontal_tolerance": 1.0, "angle_tolerance_deg": 10.0,
                           "min_obstacle_distance": None},
        },
    },
    "hover": {
        "controller": {"mode": "gravity_only", "goal": [0.0, 0.0, 0.0],
                       "desired_azimuth_deg": 0.0, "desired_elevation_deg": 90.0},
        "environment": {"obstacles": []},
        "scenario": {"name": "hover", "total_time": 100.0, "initial_state": "rest",
                     "acceptance": None},
    },
}


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge overrides into a copy of base; None replaces a section"""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}", ConfigErrorCode.UNREADABLE_FILE)
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} is not a mapping", ConfigErrorCode.INVALID_VALUE)
    return data


def build_config(data: Dict[str, Any], check: bool = True) -> SimConfig:
    """Validate a raw mapping into a SimConfig"""
    try:
        config = SimConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        if first["type"] == "extra_forbidden":
            raise ConfigError(f"unknown configuration key '{location}'", ConfigErrorCode.UNKNOWN_KEY)
        raise ConfigError(f"invalid value for '{location}': {first['msg']}",
                          ConfigErrorCode.INVALID_VALUE)
    if check:
        config.check_invariants()
    return config


def load_config(path: Optional[str] = None, preset: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None, check: bool = True) -> SimConfig:
    """Bundled defaults, then preset, then file, then overrides"""
    data = _read_yaml(DEFAULT_CONFIG_PATH)
    if preset is not None:
        if preset not in SCENARIO_PRESETS:
            raise ConfigError(f"unknown scenario preset '{preset}' "
                              f"(valid: {', '.join(sorted(SCENARIO_PRESETS))})",
                              ConfigErrorCode.UNKNOWN_PRESET)
        data = deep_merge(data, SCENARIO_PRESETS[preset])
    if path is not None:
        data = deep_merge(data, _read_yaml(Path(path)))
    if overrides:
        data = deep_merge(data, overrides)
    config = build_config(data, check=check)
    logger.debug(f"Loaded config '{config.scenario.name}' (preset={preset}, file={path})")
    return config


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass
class SystemState:
    payload_position: np.ndarray
    payload_velocity: np.ndarray
    payload_angular_velocity: np.ndarray   # inertial coordinates
    body_axes: np.ndarray                  # columns b_x, b_y, b_z
    agent_positions: np.ndarray            # (n, 3)
    agent_velocities: np.ndarray           # (n, 3)
    cable_positions: np.ndarray            # (n, t_n, 3), element 1 at the payload end
    cable_velocities: np.ndarray           # (n, t_n, 3)
    swarm_center: np.ndarray
    time: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(
            payload_position=self.payload_position.copy(),
            payload_velocity=self.payload_velocity.copy(),
            payload_angular_velocity=self.payload_angular_velocity.copy(),
            body_axes=self.body_axes.copy(),
            agent_positions=self.agent_positions.copy(),
            agent_velocities=self.agent_velocities.copy(),
            cable_positions=self.cable_positions.copy(),
            cable_velocities=self.cable_velocities.copy(),
            swarm_center=self.swarm_center.copy(),
            time=self.time,
        )


class StateLayout:
    """
    Fixed order of the flat state vector:
        payload position (3), payload velocity (3), angular velocity (3),
        body axes B row-major (9), agent positions (3n), agent velocities (3n),
        cable element positions (3 n t_n, agent-major, element 1..t_n),
        cable element velocities (3 n t_n), swarm centre (3)
    """

    def __init__(self, n: int, elements: int):
        self.n = n
        self.elements = elements
        sizes = [
            ("payload_position", 3),
            ("payload_velocity", 3),
            ("payload_angular_velocity", 3),
            ("body_axes", 9),
            ("agent_positions", 3 * n),
            ("agent_velocities", 3 * n),
            ("cable_positions", 3 * n * elements),
            ("cable_velocities", 3 * n * elements),
            ("swarm_center", 3),
        ]
        self.slices: Dict[str, slice] = {}
        offset = 0
        for name, size in sizes:
            self.slices[name] = slice(offset, offset + size)
            offset += size
        self.size = offset
        self._shapes = {
            "payload_position": (3,),
            "payload_velocity": (3,),
            "payload_angular_velocity": (3,),
            "body_axes": (3, 3),
            "agent_positions": (n, 3),
            "agent_velocities": (n, 3),
            "cable_positions": (n, elements, 3),
            "cable_velocities": (n, elements, 3),
            "swarm_center": (3,),
        }

    def pack(self, state: SystemState) -> np.ndarray:
        vector = np.empty(self.size)
        for name, part in self.slices.items():
            vector[part] = np.asarray(getattr(state, name), dtype=float).ravel()
        return vector

    def unpack(self, vector: np.ndarray, time: float = 0.0, copy_arrays: bool = True) -> SystemState:
        parts = {}
        for name, part in self.slices.items():
            view = vector[part].reshape(self._shapes[name])
            parts[name] = view.copy() if copy_arrays else view
        return SystemState(time=time, **parts)


@dataclass
class AgentControllerRecord:
    """Discrete PID memory owned by one agent"""

    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    previous_field: np.ndarray = field(default_factory=lambda: np.zeros(3))
    has_previous: bool = False
    failed: bool = False


@dataclass
class ControllerState:
    agents: List[AgentControllerRecord]

    @classmethod
    def fresh(cls, n: int) -> "ControllerState":
        return cls(agents=[AgentControllerRecord() for _ in range(n)])

    @property
    def failed_mask(self) -> np.ndarray:
        return np.array([record.failed for record in self.agents], dtype=bool)


# ---------------------------------------------------------------------------
# Frame transforms
# ---------------------------------------------------------------------------

def body_to_inertial(body_axes: np.ndarray, vector_body: np.ndarray) -> np.ndarray:
    """v^I = B v^B"""
    return np.asarray(body_axes) @ np.asarray(vector_body, dtype=float)


def inertial_to_body(body_axes: np.ndarray, point_inertial: np.ndarray,
                     payload_position: np.ndarray) -> np.ndarray:
    """r^B = B^T (r^I - r_P^I)"""
    offset = np.asarray(point_inertial, dtype=float) - np.asarray(payload_position, dtype=float)
    return np.asarray(body_axes).T @ offset


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------

def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Configure root logging for an entry point: log file plus console"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir)
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    return logging.getLogger(__name__)
