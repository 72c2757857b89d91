#!/usr/bin/env python3
"""
Swarm Payload Simulator - decentralized potential-field controller
Each agent combines gravity compensation, a PID-shaped attractive field
(transport, altitude and attitude channels), repulsion from sensed neighbours
and repulsion from sensed obstacles. Only the agent's own position, its
neighbours, its obstacles, the swarm centre and the swarm target are read; the
payload state never enters the control law.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from payload_dynamics import axes_from_attitude, desired_normal
from sim_types import (AgentControllerRecord, AttitudeInfeasibleError,
                       DegenerateGeometryError, SimConfig)

logger = logging.getLogger(__name__)

CENTER_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DesiredAttitude:
    azimuth: float
    elevation: float
    normal: np.ndarray

    @classmethod
    def from_angles(cls, azimuth: float, elevation: float,
                    min_normal_z: float = 0.1) -> "DesiredAttitude":
        normal = desired_normal(azimuth, elevation)
        if abs(normal[2]) < min_normal_z:
            raise AttitudeInfeasibleError(
                f"plane normal z-component {normal[2]:.4f} is below {min_normal_z}")
        return cls(azimuth=azimuth, elevation=elevation, normal=normal)

    @classmethod
    def from_config(cls, config: SimConfig) -> "DesiredAttitude":
        return cls.from_angles(config.desired_azimuth, config.desired_elevation,
                               config.controller.min_normal_z)


@dataclass
class LocalPerception:
    """What agent k can see: neighbours within R_N, obstacles within R_O"""

    neighbors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    obstacles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    swarm_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))


# ---------------------------------------------------------------------------
# Gravity compensation
# ---------------------------------------------------------------------------

def gravity_compensation(config: SimConfig) -> np.ndarray:
    """u_g = (m + t_n m_t + m_P / n) g: self, own cable and payload share"""
    lifted = config.swarm.agent_mass + config.cable.elements * config.cable.element_mass \
        + config.payload.mass / config.n
    return np.array([0.0, 0.0, lifted * config.environment.gravity])


def gravity_compensation_simplified(config: SimConfig) -> np.ndarray:
    """Variant that ignores the cable mass: (m + m_P / n) g"""
    lifted = config.swarm.agent_mass + config.payload.mass / config.n
    return np.array([0.0, 0.0, lifted * config.environment.gravity])


def configured_gravity_compensation(config: SimConfig) -> np.ndarray:
    if config.controller.gravity_compensation == "simplified":
        return gravity_compensation_simplified(config)
    return gravity_compensation(config)


# ---------------------------------------------------------------------------
# Attractive field
# ---------------------------------------------------------------------------

def manipulation_offset(agent_position, swarm_center, normal, cable_length: float,
                        min_normal_z: float = 0.1) -> float:
    """Height change delta_k that puts agent k on the plane with normal n'"""
    n_x, n_y, n_z = normal
    if abs(n_z) < min_normal_z:
        raise AttitudeInfeasibleError(f"plane normal z-component {n_z:.4f} is below {min_normal_z}")
    dx = agent_position[0] - swarm_center[0]
    dy = agent_position[1] - swarm_center[1]
    delta = (-n_x * dx - n_y * dy) / n_z
    half = 0.5 * cable_length
    return float(min(half, max(-half, delta)))


def altitude_field(agent_z: float, goal_z: float, cable_length: float, offset: float,
                   altitude_gain: float) -> float:
    return altitude_gain * (agent_z - (goal_z + cable_length + offset))


def transport_field(distance, beta: float):
    """
    Bounded planar attraction 1 - (1+e^b)^2 / ((1+e^(b-d))(1+e^(b+d))).

    Evaluated in the cancellation-free form
    e^b (1-e^-d)^2 / (e^b (1+e^-2d) + e^-d (1+e^2b)).
    """
    d = np.asarray(distance, dtype=float)
    e_beta = math.exp(beta)
    decay = np.exp(-d)
    denominator = e_beta * (1.0 + decay * decay) + decay * (1.0 + e_beta * e_beta)
    value = e_beta * np.expm1(-d) ** 2 / denominator
    return float(value) if value.ndim == 0 else value


def transport_field_deficit(distance, beta: float):
    """1 - transport_field without cancellation"""
    d = np.asarray(distance, dtype=float)
    e_beta = math.exp(beta)
    decay = np.exp(-d)
    denominator = e_beta * (1.0 + decay * decay) + decay * (1.0 + e_beta * e_beta)
    value = decay * (1.0 + e_beta) ** 2 / denominator
    return float(value) if value.ndim == 0 else value


def attractive_field(agent_position, swarm_center, goal_z: float, normal,
                     config: SimConfig) -> np.ndarray:
    """[f_A]_k: transport pull in x-y plus altitude/attitude error in z"""
    agent_position = np.asarray(agent_position, dtype=float)
    swarm_center = np.asarray(swarm_center, dtype=float)
    controller = config.controller
    delta_x = agent_position[0] - swarm_center[0]
    delta_y = agent_position[1] - swarm_center[1]
    distance = math.hypot(delta_x, delta_y)

    result = np.zeros(3)
    if distance >= CENTER_TOLERANCE:
        strength = transport_field(distance, controller.transport_beta)
        result[0] = strength * delta_x / distance
        result[1] = strength * delta_y / distance

    offset = manipulation_offset(agent_position, swarm_center, normal, config.cable_length,
                                 controller.min_normal_z)
    result[2] = altitude_field(agent_position[2], goal_z, config.cable_length, offset,
                               controller.altitude_gain)
    return result


# ---------------------------------------------------------------------------
# PID stage
# ---------------------------------------------------------------------------

def pid_shape(field_sample, record: AgentControllerRecord, kp, ki, kd, period: float,
              integral_limit: float) -> np.ndarray:
    """
    Discrete PID with the origin as set-point: e = -f_A.
    Rectangle-rule integral clamped to +/- integral_limit, backward-difference
    derivative that is zero on the first sample. Updates record in place.
    """
    field_sample = np.asarray(field_sample, dtype=float)
    error = -field_sample
    record.integral = np.clip(record.integral + error * period, -integral_limit, integral_limit)
    if record.has_previous:
        derivative = -(field_sample - record.previous_field) / period
    else:
        derivative = np.zeros(3)
    record.previous_field = field_sample.copy()
    record.has_previous = True
    return np.asarray(kp) * error + np.asarray(ki) * record.integral + np.asarray(kd) * derivative


# ---------------------------------------------------------------------------
# Repulsion
# ---------------------------------------------------------------------------

def _exponential_repulsion(position, sources, gain: float, scale: float, what: str) -> np.ndarray:
    position = np.asarray(position, dtype=float)
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    if sources.shape[0] == 0:
        return np.zeros(3)
    offsets = position - sources
    distances = np.linalg.norm(offsets, axis=1)
    if np.any(distances < 1e-12):
        raise DegenerateGeometryError(f"agent coincides with a sensed {what}")
    weights = (gain / scale) * np.exp(-distances / scale) / distances
    return np.sum(weights[:, None] * offsets, axis=0)


def exponential_potential(position, sources, gain: float, scale: float) -> float:
    """U = sum C e^(-d / L); the repulsion forces are its negative gradient"""
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    distances = np.linalg.norm(np.asarray(position, dtype=float) - sources, axis=1)
    return float(np.sum(gain * np.exp(-distances / scale)))


def repulsive_agent_force(position, neighbors, gain: float, scale: float) -> np.ndarray:
    return _exponential_repulsion(position, neighbors, gain, scale, "neighbour")


def obstacle_force(position, obstacles, gain: float, scale: float) -> np.ndarray:
    return _exponential_repulsion(position, obstacles, gain, scale, "obstacle")


# ---------------------------------------------------------------------------
# Swarm centre
# ---------------------------------------------------------------------------

def swarm_target(config: SimConfig) -> np.ndarray:
    """
    Point the swarm centre converges to. With goal_reference 'payload' the
    goal locates the payload centre of mass, so the target is shifted by the
    anchor centroid as it sits once the payload holds the desired attitude.
    """
    goal = config.goal
    if config.controller.goal_reference == "anchors":
        return goal.copy()
    axes = axes_from_attitude(config.desired_azimuth, config.desired_elevation)
    return goal + axes @ config.anchors_body.mean(axis=0)


def swarm_center_derivative(swarm_center, goal, center_gain, center_scale: float) -> np.ndarray:
    """
    Virtual centre velocity towards the goal. The x-y gain is throttled by
    e^-|zeta_z| so the horizontal motion waits for the altitude to settle.
    """
    zeta = np.asarray(goal, dtype=float) - np.asarray(swarm_center, dtype=float)
    distance = float(np.linalg.norm(zeta))
    if distance < CENTER_TOLERANCE:
        return np.zeros(3)
    throttle = math.exp(-abs(zeta[2]))
    shaping = np.array([throttle, throttle, 1.0])
    speed = -math.expm1(-distance / center_scale) / center_scale
    return speed * shaping * np.asarray(center_gain, dtype=float) * zeta / distance


# ---------------------------------------------------------------------------
# Control law
# ---------------------------------------------------------------------------

def control_input(agent_position, perception: LocalPerception, record: AgentControllerRecord,
                  config: SimConfig, attitude: Optional[DesiredAttitude] = None) -> np.ndarray:
    """u_k = u_g + PID(f_A) + neighbour repulsion + obstacle repulsion"""
    controller = config.controller
    if record.failed or controller.mode == "off":
        return np.zeros(3)
    u_g = configured_gravity_compensation(config)
    if controller.mode == "gravity_only":
        return u_g

    if attitude is None:
        attitude = DesiredAttitude.from_config(config)
    field_sample = attractive_field(agent_position, perception.swarm_center, perception.target[2],
                                    attitude.normal, config)
    shaped = pid_shape(field_sample, record, controller.kp, controller.ki, controller.kd,
                       controller.period, controller.integral_limit)
    repulsion = repulsive_agent_force(agent_position, perception.neighbors,
                                      controller.repulsion_gain, controller.repulsion_scale)
    avoidance = obstacle_force(agent_position, perception.obstacles,
                               controller.obstacle_gain, controller.obstacle_scale)
    return u_g + shaped + repulsion + avoidance
