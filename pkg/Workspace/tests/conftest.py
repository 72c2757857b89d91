"""Shared fixtures for the swarm payload simulator tests"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from sim_engine import equilibrium_state  # noqa: E402
from sim_types import load_config  # noqa: E402


@pytest.fixture
def mission_config():
    """Bundled defaults (the case 1 mission)"""
    return load_config()


@pytest.fixture
def hover_config():
    return load_config(preset="hover")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def swung_chain():
    """Builds the equilibrium fixture with chain 1 swung rigidly about its anchor"""
    def build(config, angle=0.01):
        state = equilibrium_state(config)
        anchor = config.anchors_body[0]
        turn = np.array([[1.0, 0.0, 0.0],
                         [0.0, math.cos(angle), -math.sin(angle)],
                         [0.0, math.sin(angle), math.cos(angle)]])
        state.cable_positions[0] = anchor + (state.cable_positions[0] - anchor) @ turn.T
        state.agent_positions[0] = anchor + turn @ (state.agent_positions[0] - anchor)
        return state
    return build
