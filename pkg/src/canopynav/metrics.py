"""Flight performance metrics and the failure-cause taxonomy.

Works on flight logs: a header record, one record per control tick, and a
terminal record. Everything here is pure post-processing, so reports can
always be re-derived from stored logs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

GOAL_TOLERANCE = 1.0
NO_PATH_PROXIMITY = 3.0
SMOOTHING_WINDOW_S = 0.5
DODGE_JERK_FRACTION = 0.5

FAILURE_CAUSES = ("Leaves", "NaN_SFC", "Unstable", "Tree")


@dataclass(frozen=True)
class MissionMetrics:
    success: bool
    failure_cause: str | None
    t_true: float
    d: float
    v_true: float
    v_p2p: float
    t_extra: float
    collisions: int
    fatal_collision: bool
    leaf_dodges: int
    emergency_stops: int
    emergency_stop_total: float
    terminal: tuple[float, float, float]

    def to_dict(self) -> dict:
        return asdict(self)


def _tick_records(records: list[dict]) -> list[dict]:
    return [r for r in records if r.get("kind") == "tick"]


def _events(records: list[dict]) -> list[tuple[float, dict]]:
    out = []
    for r in _tick_records(records):
        for ev in r.get("events", ()):
            out.append((r["t"], ev))
    return out


def smooth_positions(positions: np.ndarray, dt: float, window_s: float = SMOOTHING_WINDOW_S) -> np.ndarray:
    """Centered moving average with a window that shrinks near the ends.

    The half-window collapses symmetrically at the boundaries, so the first
    and last samples pass through unchanged. That keeps the smoothed path
    at least as long as the start-to-terminal chord, which in turn keeps
    the extra-time metric non-negative.
    """
    n = positions.shape[0]
    half = int(round(window_s / 2.0 / dt))
    if n == 0 or half == 0:
        return positions.copy()
    out = np.empty_like(positions)
    for i in range(n):
        h = min(half, i, n - 1 - i)
        out[i] = positions[i - h:i + h + 1].mean(axis=0)
    return out


def path_length(positions: np.ndarray) -> float:
    if positions.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(positions, axis=0), axis=1).sum())


def _effective_goal(records: list[dict], goal) -> np.ndarray:
    if goal is None:
        goal = records[0]["goal"]
    goal = np.asarray(goal, dtype=float)
    for _, ev in _events(records):
        if ev["kind"] == "goal_moved":
            goal = np.asarray(ev["goal"], dtype=float)
    return goal


def _leaf_windows(records: list[dict]) -> list[tuple[float, float]]:
    return [
        (ev["trigger"], ev["trigger"] + ev["lifetime"])
        for _, ev in _events(records)
        if ev["kind"] == "leaf"
    ]


def compute(records: list[dict], goal=None) -> MissionMetrics:
    """Metrics for one flight log.

    `goal` defaults to the header's goal; a goal_moved event (the goal
    voxel turned out occupied and was repositioned) takes precedence.
    """
    if not records:
        raise ValueError("empty flight log")
    header = records[0]
    if header.get("kind") != "header":
        raise ValueError("log must start with a header record")
    end = records[-1]
    if end.get("kind") != "end":
        raise ValueError("log must close with an end record")
    ticks = _tick_records(records)
    if not ticks:
        raise ValueError("log has no tick records")

    goal_pos = _effective_goal(records, goal)
    est = np.array([r["pe"] for r in ticks])
    times = np.array([r["t"] for r in ticks])
    t_true = float(end["t"])
    dt = float(np.median(np.diff(times))) if len(times) > 1 else 0.1

    d = float(np.linalg.norm(est[-1] - est[0]))
    smoothed = smooth_positions(est, dt)
    length = path_length(smoothed)
    if t_true > 0.0:
        v_true = length / t_true
        v_p2p = d / t_true
    else:
        v_true = 0.0
        v_p2p = 0.0
    t_extra = t_true - d / v_true if v_true > 0.0 else 0.0

    events = _events(records)
    fatal = any(ev["kind"] == "collision" and ev["severity"] == "fatal" for _, ev in events)
    motors_off = any(ev["kind"] == "motors_off" for _, ev in events)
    timeout = any(ev["kind"] == "timeout" for _, ev in events)
    no_path = any(ev["kind"] == "no_path" for _, ev in events)
    collisions = sum(
        1 for _, ev in events if ev["kind"] == "collision" and ev["severity"] == "minor"
    )

    terminal_dist = float(np.linalg.norm(est[-1] - goal_pos))
    reached = terminal_dist <= GOAL_TOLERANCE
    gave_up_close = no_path and terminal_dist <= NO_PATH_PROXIMITY
    success = (reached or gave_up_close) and not (fatal or motors_off or timeout)

    j_max = float(header.get("j_max", 50.0))
    windows = _leaf_windows(records)
    dodges = 0
    prev_spike = False
    for r in ticks:
        t = r["t"]
        active = any(lo <= t <= hi for lo, hi in windows)
        spike = active and max(abs(u) for u in r["u"]) > DODGE_JERK_FRACTION * j_max
        if spike and not prev_spike:
            dodges += 1
        prev_spike = spike

    stops = 0
    stop_ticks = 0
    prev_emergency = False
    for r in ticks:
        emergency = any(ev["kind"] == "emergency" for ev in r.get("events", ()))
        if emergency:
            stop_ticks += 1
            if not prev_emergency:
                stops += 1
        prev_emergency = emergency

    cause = None
    if not success:
        cause = classify_failure(records)

    return MissionMetrics(
        success=success,
        failure_cause=cause,
        t_true=t_true,
        d=d,
        v_true=v_true,
        v_p2p=v_p2p,
        t_extra=t_extra,
        collisions=collisions,
        fatal_collision=fatal,
        leaf_dodges=dodges,
        emergency_stops=stops,
        emergency_stop_total=stop_ticks * dt,
        terminal=tuple(float(x) for x in est[-1]),
    )


def classify_failure(records: list[dict]) -> str:
    """Single failure cause for a failed flight.

    Precedence: Leaves, then NaN_SFC, then Unstable, then Tree. A leaf
    cloud active in the two seconds before the fatal event claims the
    failure; an unrecovered corridor NaN claims it next; a timeout or
    five consecutive fallback-replay control ticks right before the end
    reads as unstable flight; anything else is a plain tree strike.
    """
    ticks = _tick_records(records)
    end = records[-1]
    if end.get("kind") != "end":
        raise ValueError("log must close with an end record")
    if end.get("outcome") == "success":
        raise ValueError("cannot classify a successful flight")
    t_end = float(end["t"])

    for lo, hi in _leaf_windows(records):
        if lo <= t_end and hi >= t_end - 2.0:
            return "Leaves"

    last_nan = None
    recovered_after = False
    for t, ev in _events(records):
        if ev["kind"] == "nan":
            last_nan = t
            recovered_after = False
        elif ev["kind"] == "nan_recovered" and last_nan is not None:
            recovered_after = True
    if last_nan is not None and not recovered_after:
        return "NaN_SFC"

    if any(ev["kind"] == "timeout" for _, ev in _events(records)):
        return "Unstable"
    tail = ticks[-5:]
    if len(tail) == 5 and all(
        any(ev["kind"] in ("replay", "unstable_command") for ev in r.get("events", ()))
        for r in tail
    ):
        return "Unstable"

    return "Tree"


def aggregate(runs: list[MissionMetrics]) -> dict:
    """Batch summary across flights of one scenario.

    Speed and time grand means cover successful flights only; collision
    and disturbance tallies cover everything, with the share belonging to
    failed flights broken out.
    """
    if not runs:
        raise ValueError("no runs to aggregate")
    n = len(runs)
    ok = [r for r in runs if r.success]
    failed = [r for r in runs if not r.success]

    def grand_mean(values):
        return float(np.mean(values)) if values else None

    causes = {c: 0 for c in FAILURE_CAUSES}
    for r in failed:
        causes[r.failure_cause] += 1

    return {
        "flights": n,
        "successes": len(ok),
        "success_rate": f"{len(ok)}/{n}",
        "success_fraction": len(ok) / n,
        "mean_t_true": grand_mean([r.t_true for r in ok]),
        "mean_v_p2p": grand_mean([r.v_p2p for r in ok]),
        "mean_v_true": grand_mean([r.v_true for r in ok]),
        "mean_t_extra": grand_mean([r.t_extra for r in ok]),
        "collisions_total": sum(r.collisions for r in runs),
        "collisions_in_failed": sum(r.collisions for r in failed),
        "leaf_dodges_total": sum(r.leaf_dodges for r in runs),
        "emergency_stops_total": sum(r.emergency_stops for r in runs),
        "emergency_stop_seconds_total": float(sum(r.emergency_stop_total for r in runs)),
        "failure_causes": causes,
    }


FLIGHT_CSV_COLUMNS = (
    "flight", "success", "failure_cause",
    "endpoint_x", "endpoint_y", "endpoint_z",
    "collisions", "leaf_dodges",
    "flight_time_s", "v_p2p", "v_true", "t_extra_s",
    "emergency_stops", "emergency_stop_s",
)


def flight_csv_row(flight_id: int, m: MissionMetrics) -> list:
    return [
        flight_id,
        int(m.success),
        m.failure_cause or "",
        m.terminal[0], m.terminal[1], m.terminal[2],
        m.collisions, m.leaf_dodges,
        m.t_true, m.v_p2p, m.v_true, m.t_extra,
        m.emergency_stops, m.emergency_stop_total,
    ]
