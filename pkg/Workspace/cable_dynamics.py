#!/usr/bin/env python3
"""
Swarm Payload Simulator - lumped-mass cable model
Each cable is a chain of point masses joined by tension-only spring-dampers.
Nodes of chain k are ordered [anchor c_k, s_1 .. s_tn, agent r_k]; element 1
sits at the payload end.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from sim_types import CableConfig, DegenerateGeometryError, SimConfig

logger = logging.getLogger(__name__)

DEGENERATE_LENGTH = 1e-12


@dataclass
class CableChain:
    """One cable between anchor c_k (payload) and agent k"""

    agent_index: int                  # 1-based
    element_positions: np.ndarray     # (t_n, 3)
    element_velocities: np.ndarray    # (t_n, 3)
    anchor_body: np.ndarray           # c^B_k

    @property
    def elements(self) -> int:
        return self.element_positions.shape[0]


def tautness_gate(extension):
    """alpha(x): 1 for a stretched link, 0 otherwise"""
    return np.where(np.asarray(extension) > 0.0, 1.0, 0.0)


def _link_kernel(separation: np.ndarray, relative_velocity: np.ndarray, length: np.ndarray,
                 stiffness: float, damping: float, free_length: float) -> np.ndarray:
    """Force on the first node of each link; last axis holds xyz, length keeps a unit last axis"""
    unit = separation / length
    extension = length - free_length
    rate = np.sum(unit * relative_velocity, axis=-1, keepdims=True)
    magnitude = np.where(extension > 0.0, stiffness * extension + damping * rate, 0.0)
    return -magnitude * unit


def element_force(x_i, x_j, v_i, v_j, stiffness: float, damping: float,
                  free_length: float) -> np.ndarray:
    """
    Force on node i due to its link with node j.

    Broadcasts over leading axes; the last axis holds xyz.
    """
    separation = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    length = np.linalg.norm(separation, axis=-1, keepdims=True)
    if np.any(length < DEGENERATE_LENGTH):
        raise DegenerateGeometryError("coincident cable nodes")
    relative_velocity = np.asarray(v_i, dtype=float) - np.asarray(v_j, dtype=float)
    return _link_kernel(separation, relative_velocity, length, stiffness, damping, free_length)


def link_forces(nodes: np.ndarray, node_velocities: np.ndarray, stiffness: float,
                damping: float, free_length: float) -> np.ndarray:
    """
    Vectorised link forces for every chain.

    nodes, node_velocities: (n, t_n + 2, 3)
    Returns (n, t_n + 1, 3); entry [k, j] is the force on node j from the
    link (j, j + 1). The force on node j + 1 is its exact negative.
    """
    try:
        return element_force(nodes[:, :-1], nodes[:, 1:], node_velocities[:, :-1],
                             node_velocities[:, 1:], stiffness, damping, free_length)
    except DegenerateGeometryError:
        lengths = np.linalg.norm(nodes[:, :-1] - nodes[:, 1:], axis=-1)
        agent, link = np.argwhere(lengths < DEGENERATE_LENGTH)[0]
        raise DegenerateGeometryError("coincident cable nodes", agent=int(agent) + 1,
                                      element=int(link)) from None


def element_accelerations(lower: np.ndarray, element_mass: float,
                          gravity_vector: np.ndarray) -> np.ndarray:
    """Accelerations of all cable elements from link_forces output"""
    return (lower[:, 1:] - lower[:, :-1]) / element_mass - gravity_vector


def anchor_kinematics(payload_position, payload_velocity, omega, body_axes,
                      anchor_body) -> Tuple[np.ndarray, np.ndarray]:
    """Inertial position and velocity of payload-fixed anchors; anchor_body is (3,) or (n, 3)"""
    offset = np.asarray(anchor_body, dtype=float) @ np.asarray(body_axes, dtype=float).T
    position = np.asarray(payload_position, dtype=float) + offset
    velocity = np.asarray(payload_velocity, dtype=float) + np.cross(omega, offset)
    return position, velocity


def cable_accelerations(chain: CableChain, agent_position, agent_velocity,
                        anchor_position, anchor_velocity, cable: CableConfig,
                        gravity_vector: np.ndarray) -> np.ndarray:
    """Accelerations of the t_n elements of one chain, element 1 first"""
    nodes = np.vstack([anchor_position, chain.element_positions, agent_position])[None]
    velocities = np.vstack([anchor_velocity, chain.element_velocities, agent_velocity])[None]
    try:
        lower = link_forces(nodes, velocities, cable.stiffness, cable.damping,
                            cable.free_length)
    except DegenerateGeometryError as e:
        raise DegenerateGeometryError("coincident cable nodes", agent=chain.agent_index,
                                      element=e.element)
    return element_accelerations(lower, cable.element_mass, gravity_vector)[0]


def cable_potential_energy(nodes: np.ndarray, stiffness: float, free_length: float) -> float:
    """Sum of 1/2 k dx^2 over taut links"""
    lengths = np.linalg.norm(nodes[..., :-1, :] - nodes[..., 1:, :], axis=-1)
    extension = np.maximum(lengths - free_length, 0.0)
    return float(0.5 * stiffness * np.sum(extension ** 2))


def hanging_chain_stretches(tip_mass: float, element_mass: float, elements: int,
                            stiffness: float, gravity: float) -> np.ndarray:
    """
    Static extensions of a vertical chain hanging from its top node.

    Link 0 carries only the tip load; link j also carries the j elements
    below it. Returns t_n + 1 values, bottom link first.
    """
    loads = (tip_mass + element_mass * np.arange(elements + 1)) * gravity
    return loads / stiffness


def static_chain_stretches(config: SimConfig) -> np.ndarray:
    """Per-link stretch of one hover cable carrying m_P / n at the anchor"""
    return hanging_chain_stretches(config.payload.mass / config.n, config.cable.element_mass,
                                   config.cable.elements, config.cable.stiffness,
                                   config.environment.gravity)


def static_cable_elongation(config: SimConfig) -> float:
    return float(np.sum(static_chain_stretches(config)))
