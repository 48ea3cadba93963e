"""Small angle and rotation helpers shared by the planner and the simulator."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


def yaw_to_world(yaw: float) -> np.ndarray:
    """Rotation taking body-frame vectors to the global frame (pure yaw)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def world_to_body(yaw: float) -> np.ndarray:
    """Rotation taking global-frame vectors into the body frame."""
    return yaw_to_world(yaw).T
