"""Jerk-input model-predictive controller solved as a condensed QP.

The decision vector stacks the horizon's jerk commands (N steps by 3 axes).
Positions, velocities, and accelerations are affine in those jerks through
prediction matrices built by pushing unit impulses through the shared
discrete dynamics, so controller and simulator agree exactly about what a
command does.

Tracking cost pulls every predicted position toward a reference sampled
along the current path; terminal terms pull the final velocity and
acceleration to zero so the plan always ends in a feasible brake. Constraints
are per-axis velocity/acceleration/jerk boxes plus the safe-flight-corridor
hyperplanes of whichever polyhedron each step's reference arc falls in.

When the QP fails, the controller replays the remainder of its last good
plan; when that runs dry it commands zero jerk and flags the flight as
unstable so the caller can react.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corridor import Corridor, Polyhedron
from .dynamics import step_triple_integrator
from .geometry import point_at_arc, polyline_arclength, project_to_polyline
from .qp import QpSettings, QpStatus, QuadProgram, solve_qp


@dataclass(frozen=True)
class MpcParams:
    horizon: int = 15
    dt: float = 0.1
    r_pos: float = 2500.0
    r_pos_terminal: float = 3500.0
    r_vel_terminal: float = 200.0
    r_acc_terminal: float = 200.0
    r_jerk: float = 1.0
    v_max: float = 10.0
    a_max: float = 20.0
    a_down: float = 9.5
    j_max: float = 50.0
    slow_radius: float = 0.5


@dataclass
class ControlOutcome:
    """One control tick's verdict."""

    jerk: np.ndarray
    solved: bool
    replay_age: int          # 0 on a fresh solve, grows while replaying
    unstable: bool           # replay cache ran dry (or never existed)
    qp_status: QpStatus | None
    qp_iterations: int
    predicted_positions: np.ndarray | None = None


def sample_reference(
    sub_path: np.ndarray,
    position: np.ndarray,
    v_target: float,
    params: MpcParams,
    ends_at_goal: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Reference points and their arc coordinates for each horizon step.

    The current position is projected onto the path and the reference then
    advances by ``v_target * dt`` per step. When the path terminates at the
    mission goal the advance rate ramps down inside ``slow_radius`` so the
    references (and with them the drone) settle on the endpoint instead of
    overshooting it.
    """
    pts = np.asarray(sub_path, dtype=np.float64)
    cum = polyline_arclength(pts)
    s, _ = project_to_polyline(np.asarray(position, dtype=np.float64), pts, cum)
    total = float(cum[-1])
    refs = np.empty((params.horizon, 3))
    arcs = np.empty(params.horizon)
    for k in range(params.horizon):
        speed = v_target
        if ends_at_goal:
            remaining = max(0.0, total - s)
            speed = v_target * min(1.0, remaining / params.slow_radius)
        s = min(s + speed * params.dt, total)
        refs[k] = point_at_arc(pts, cum, s)
        arcs[k] = s
    return refs, arcs


def _prediction_matrices(n: int, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scalar impulse responses: S[k, j] = d(state at step k+1) / d(u_j)."""
    sp = np.zeros((n, n))
    sv = np.zeros((n, n))
    sa = np.zeros((n, n))
    for j in range(n):
        p = v = a = 0.0
        for k in range(j, n):
            u = 1.0 if k == j else 0.0
            p, v, a = step_triple_integrator(p, v, a, u, dt)
            sp[k, j] = p
            sv[k, j] = v
            sa[k, j] = a
    return sp, sv, sa


def _free_response(n: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of (v0, a0) in the zero-input state at each step.

    Position at step k+1 is ``p0 + fv[k] * v0 + fa[k] * a0``; velocity is
    ``v0 + ga[k] * a0``; acceleration stays ``a0``.
    """
    fv = np.zeros(n)
    fa = np.zeros(n)
    ga = np.zeros(n)
    p_v = 0.0  # position response to unit v0
    p_a = 0.0  # position response to unit a0
    v_a = 0.0  # velocity response to unit a0
    for k in range(n):
        p_v, _, _ = step_triple_integrator(p_v, 1.0, 0.0, 0.0, dt)
        p_a, v_a, _ = step_triple_integrator(p_a, v_a, 1.0, 0.0, dt)
        fv[k] = p_v
        fa[k] = p_a
        ga[k] = v_a
    return np.stack([fv, fa]), ga


class MpcController:
    """Receding-horizon jerk controller with replay-on-failure fallback."""

    def __init__(
        self, params: MpcParams | None = None, solver_settings: QpSettings | None = None
    ):
        self.params = params or MpcParams()
        self.settings = solver_settings or QpSettings()
        n = self.params.horizon
        dt = self.params.dt
        sp, sv, sa = _prediction_matrices(n, dt)
        eye3 = np.eye(3)
        self._bp = np.kron(sp, eye3)
        self._bv = np.kron(sv, eye3)
        self._ba = np.kron(sa, eye3)
        (self._fv, self._fa), self._ga = _free_response(n, dt)

        w = np.full(n, self.params.r_pos)
        w[-1] += self.params.r_pos_terminal
        self._w_stack = np.repeat(w, 3)
        bp_w = self._bp * self._w_stack[:, None]
        bv_n = self._bv[-3:]
        ba_n = self._ba[-3:]
        self._p_mat = 2.0 * (
            self._bp.T @ bp_w
            + self.params.r_vel_terminal * (bv_n.T @ bv_n)
            + self.params.r_acc_terminal * (ba_n.T @ ba_n)
            + self.params.r_jerk * np.eye(3 * n)
        )
        self._p_mat = np.ascontiguousarray(0.5 * (self._p_mat + self._p_mat.T))
        self._bv_n = bv_n
        self._ba_n = ba_n

        # Velocity / acceleration / jerk box rows are fixed; corridor rows
        # are appended per solve.
        self._a_fixed = np.vstack([self._bv, self._ba, np.eye(3 * n)])
        a_lo = np.tile([-self.params.a_max, -self.params.a_max, -self.params.a_down], n)
        a_hi = np.full(3 * n, self.params.a_max)
        self._acc_lo = a_lo
        self._acc_hi = a_hi

        self._cached_jerks: np.ndarray | None = None
        self._replay_age = 0
        self._warm_x: np.ndarray | None = None

    # -- QP assembly ----------------------------------------------------------

    def build_problem(
        self,
        position: np.ndarray,
        velocity: np.ndarray,
        acceleration: np.ndarray,
        refs: np.ndarray,
        arcs: np.ndarray,
        corridor: Corridor | Polyhedron,
    ) -> QuadProgram:
        n = self.params.horizon
        p0 = np.asarray(position, dtype=np.float64)
        v0 = np.asarray(velocity, dtype=np.float64)
        a0 = np.asarray(acceleration, dtype=np.float64)
        if not (np.isfinite(p0).all() and np.isfinite(v0).all() and np.isfinite(a0).all()):
            raise ValueError("controller state must be finite")
        if not np.isfinite(refs).all():
            raise ValueError("reference points must be finite")

        p_free = np.tile(p0, n) + np.kron(self._fv, v0) + np.kron(self._fa, a0)
        v_free = np.tile(v0, n) + np.kron(self._ga, a0)
        a_free = np.tile(a0, n)

        err = p_free - refs.reshape(-1)
        q = 2.0 * (
            self._bp.T @ (self._w_stack * err)
            + self.params.r_vel_terminal * (self._bv_n.T @ v_free[-3:])
            + self.params.r_acc_terminal * (self._ba_n.T @ a_free[-3:])
        )

        vel_lo = -self.params.v_max - v_free
        vel_hi = self.params.v_max - v_free
        acc_lo = self._acc_lo - a_free
        acc_hi = self._acc_hi - a_free
        jerk_lo = np.full(3 * n, -self.params.j_max)
        jerk_hi = np.full(3 * n, self.params.j_max)

        rows = [self._a_fixed]
        lows = [vel_lo, acc_lo, jerk_lo]
        highs = [vel_hi, acc_hi, jerk_hi]
        for k in range(n):
            poly = (
                corridor.polyhedron_at(float(arcs[k]))
                if isinstance(corridor, Corridor)
                else corridor
            )
            block = poly.normals @ self._bp[3 * k : 3 * k + 3]
            rows.append(block)
            lows.append(np.full(poly.offsets.shape[0], -np.inf))
            highs.append(poly.offsets - poly.normals @ p_free[3 * k : 3 * k + 3])
        A = np.ascontiguousarray(np.vstack(rows))
        return QuadProgram(
            P=self._p_mat.copy(),
            q=np.ascontiguousarray(q),
            A=A,
            lower=np.ascontiguousarray(np.concatenate(lows)),
            upper=np.ascontiguousarray(np.concatenate(highs)),
        )

    # -- control --------------------------------------------------------------

    def reset(self) -> None:
        self._cached_jerks = None
        self._replay_age = 0
        self._warm_x = None

    def step(
        self,
        position: np.ndarray,
        velocity: np.ndarray,
        acceleration: np.ndarray,
        refs: np.ndarray,
        arcs: np.ndarray,
        corridor: Corridor | Polyhedron,
    ) -> ControlOutcome:
        n = self.params.horizon
        prob = self.build_problem(position, velocity, acceleration, refs, arcs, corridor)
        warm = self._warm_x if self._warm_x is not None else None
        res = solve_qp(prob, warm_x=warm, settings=self.settings)
        if res.status is QpStatus.SOLVED:
            jerks = res.x.reshape(n, 3)
            self._cached_jerks = jerks
            self._replay_age = 0
            # Shifted warm start for the next tick: drop u0, repeat tail.
            self._warm_x = np.concatenate([res.x[3:], res.x[-3:]])
            p_free = (
                np.tile(position, n) + np.kron(self._fv, velocity) + np.kron(self._fa, acceleration)
            )
            pred = (p_free + self._bp @ res.x).reshape(n, 3)
            return ControlOutcome(
                jerk=jerks[0].copy(),
                solved=True,
                replay_age=0,
                unstable=False,
                qp_status=res.status,
                qp_iterations=res.iterations,
                predicted_positions=pred,
            )
        # Failed solve: replay the last good plan one step further in. Shift
        # the warm start along with it so it stays aligned in time instead of
        # going stale over a run of failures.
        self._replay_age += 1
        if self._warm_x is not None:
            self._warm_x = np.concatenate([self._warm_x[3:], self._warm_x[-3:]])
        if self._cached_jerks is not None and self._replay_age < n:
            jerk = self._cached_jerks[self._replay_age].copy()
            return ControlOutcome(
                jerk=jerk,
                solved=False,
                replay_age=self._replay_age,
                unstable=False,
                qp_status=res.status,
                qp_iterations=res.iterations,
            )
        return ControlOutcome(
            jerk=np.zeros(3),
            solved=False,
            replay_age=self._replay_age,
            unstable=True,
            qp_status=res.status,
            qp_iterations=res.iterations,
        )
