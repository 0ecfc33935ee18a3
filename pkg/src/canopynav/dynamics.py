"""Discrete triple-integrator dynamics shared by the simulator and controller.

Jerk is the input and is held constant across a step, so the update is the
exact integral of ``pdot = v, vdot = a, adot = u`` — not an approximation.
Both the physics loop and the controller's prediction matrices are built from
this one function, which keeps their models bit-identical.
"""

from __future__ import annotations

import numpy as np


def step_triple_integrator(
    p: np.ndarray, v: np.ndarray, a: np.ndarray, u: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One exact step under constant jerk ``u`` over ``dt`` seconds."""
    p_next = p + dt * v + (0.5 * dt * dt) * a + (dt * dt * dt / 6.0) * u
    v_next = v + dt * a + (0.5 * dt * dt) * u
    a_next = a + dt * u
    return p_next, v_next, a_next
