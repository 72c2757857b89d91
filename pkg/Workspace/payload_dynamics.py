#!/usr/bin/env python3
"""
Swarm Payload Simulator - payload rigid body
Translational and rotational dynamics of the slung payload, evolution of its
body axes and measurement of the payload-plane attitude
"""

import logging
import math
from typing import Tuple

import numpy as np
from scipy.linalg import polar

from sim_types import IntegrityError

logger = logging.getLogger(__name__)

ORTHONORMAL_LIMIT = 0.1


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == a x b"""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def desired_normal(azimuth: float, elevation: float) -> np.ndarray:
    """Unit payload-plane normal for azimuth psi and elevation theta (radians)"""
    return np.array([math.cos(elevation) * math.cos(azimuth),
                     math.cos(elevation) * math.sin(azimuth),
                     math.sin(elevation)])


def payload_translational_accel(velocity, cable_forces, external_force, mass: float,
                                drag: float, gravity_vector) -> np.ndarray:
    """r_P'' = (-c v + sum of anchor link forces + external) / m_P - g"""
    total = -drag * np.asarray(velocity, dtype=float) + np.sum(cable_forces, axis=0) \
        + np.asarray(external_force, dtype=float)
    return total / mass - gravity_vector


def payload_moment(anchors_inertial, cable_forces) -> np.ndarray:
    """Moment about the centre of mass from forces at the anchor offsets B c_k"""
    return np.sum(np.cross(anchors_inertial, cable_forces), axis=0)


def payload_angular_accel(omega, cable_forces, anchors_inertial, inertia) -> np.ndarray:
    """
    omega' = I^-1 (-omega x I omega + M)

    omega and M are inertial-frame vectors and I is held constant, so the
    Euler structure is applied literally in the inertial frame.
    """
    omega = np.asarray(omega, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    moment = payload_moment(anchors_inertial, cable_forces)
    return np.linalg.solve(inertia, -np.cross(omega, inertia @ omega) + moment)


def body_axes_derivative(body_axes, omega) -> np.ndarray:
    """Column-wise db_i/dt = omega x b_i"""
    return skew(omega) @ np.asarray(body_axes, dtype=float)


def orthonormalize(body_axes) -> np.ndarray:
    """Nearest proper rotation to a drifted frame (orthogonal polar factor)"""
    body_axes = np.asarray(body_axes, dtype=float)
    drift = np.max(np.abs(body_axes.T @ body_axes - np.eye(3)))
    if not drift < ORTHONORMAL_LIMIT:
        raise IntegrityError(f"body axes drifted {drift:.3e} from orthonormal")
    rotation, _ = polar(body_axes)
    if np.linalg.det(rotation) < 0:
        raise IntegrityError("body axes lost their right-handed orientation")
    return rotation


def measure_azimuth_elevation(body_axes) -> Tuple[float, float]:
    """(psi, theta) of b_z in radians; psi is 0 for a vertical normal"""
    normal = np.asarray(body_axes, dtype=float)[:, 2]
    elevation = math.asin(min(1.0, max(-1.0, float(normal[2]))))
    if math.cos(elevation) < 1e-9:
        return 0.0, elevation
    return math.atan2(float(normal[1]), float(normal[0])), elevation


def axes_from_attitude(azimuth: float, elevation: float) -> np.ndarray:
    """A right-handed frame whose b_z is the normal built from (psi, theta)"""
    b_z = desired_normal(azimuth, elevation)
    helper = np.array([0.0, 0.0, 1.0]) if abs(b_z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b_x = np.cross(helper, b_z)
    b_x /= np.linalg.norm(b_x)
    b_y = np.cross(b_z, b_x)
    return np.column_stack([b_x, b_y, b_z])
