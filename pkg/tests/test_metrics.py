"""Flight metrics: extra time, success rules, failure taxonomy, aggregates."""

import math

import numpy as np
import pytest

from canopynav.metrics import (
    MissionMetrics,
    aggregate,
    classify_failure,
    compute,
    smooth_positions,
)

DT = 0.1


def make_log(positions, events=None, outcome="success", reason="goal",
             goal=(60.0, 0.0, 1.0), commands=None, j_max=50.0):
    """Assemble a log from an estimate trajectory sampled at the control rate."""
    events = events or {}
    records = [{
        "kind": "header", "flight_index": 0, "seed": 0, "variant": "Optimized",
        "goal": list(goal), "start": list(positions[0]), "j_max": j_max,
    }]
    for i, p in enumerate(positions):
        u = commands[i] if commands is not None else [0.0, 0.0, 0.0]
        records.append({
            "kind": "tick", "tick": i * 10, "t": i * DT,
            "p": list(p), "v": [0.0, 0.0, 0.0], "a": [0.0, 0.0, 0.0],
            "pe": list(p), "ve": [0.0, 0.0, 0.0], "ae": [0.0, 0.0, 0.0],
            "u": list(u), "events": list(events.get(i, ())),
        })
    records.append({
        "kind": "end", "outcome": outcome, "reason": reason,
        "t": (len(positions) - 1) * DT,
    })
    return records


def constant_speed_path(waypoints, speed):
    """Sample a polyline at the control rate with constant speed along it."""
    waypoints = np.asarray(waypoints, dtype=float)
    seg = np.diff(waypoints, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    n = int(round(total / speed / DT))
    out = []
    for i in range(n + 1):
        s = min(total, i * DT * speed)
        j = int(np.searchsorted(cum, s, side="right") - 1)
        j = min(j, len(seg_len) - 1)
        frac = (s - cum[j]) / seg_len[j] if seg_len[j] > 0 else 0.0
        out.append(waypoints[j] + frac * seg[j])
    return np.array(out)


def test_straight_flight_has_zero_extra_time():
    path = constant_speed_path([(0.0, 0.0, 1.0), (56.0, 0.0, 1.0)], 1.0)
    m = compute(make_log(path, goal=(56.0, 0.0, 1.0)))
    assert m.success
    assert abs(m.t_extra) < 1e-6
    assert abs(m.v_p2p - 1.0) < 1e-3
    assert abs(m.v_true - 1.0) < 1e-3


def test_table_flight_fixture_reproduces_extra_time():
    """A detoured 93.5 s flight with the published endpoint and speed."""
    start = np.array([0.0, 0.0, 1.0])
    terminal = np.array([55.96, -0.45, 1.45])
    d = np.linalg.norm(terminal - start)
    t_true = 93.5
    v_true = 0.81
    length = v_true * t_true
    # Single-corner detour whose legs sum to the target path length.
    mid = (start + terminal) / 2.0
    span = terminal - start
    lateral = np.cross(span / np.linalg.norm(span), [0.0, 0.0, 1.0])
    h = math.sqrt((length / 2.0) ** 2 - (d / 2.0) ** 2)
    path = constant_speed_path([start, mid + h * lateral, terminal], length / t_true)
    m = compute(make_log(path, goal=terminal))
    assert abs(m.d - d) < 0.02
    assert abs(m.t_true - t_true) < 0.2
    assert abs(m.t_extra - 24.4) < 0.5


def test_known_detour_length_shows_up_as_extra_time():
    # 10 m of detour at 1 m/s: one wide dogleg adds exactly 10 m of path.
    d = 50.0
    extra = 10.0
    h = math.sqrt(((d + extra) / 2.0) ** 2 - (d / 2.0) ** 2)
    path = constant_speed_path(
        [(0.0, 0.0, 1.0), (d / 2.0, h, 1.0), (d, 0.0, 1.0)], 1.0
    )
    m = compute(make_log(path, goal=(d, 0.0, 1.0)))
    assert abs(m.t_extra - extra) < 0.1


def test_extra_time_is_never_negative():
    rng = np.random.default_rng(7)
    for _ in range(30):
        steps = rng.integers(20, 200)
        deltas = rng.normal(0.0, 0.05, size=(steps, 3))
        path = np.cumsum(deltas, axis=0) + [0.0, 0.0, 5.0]
        m = compute(make_log(path, outcome="failure", reason="timeout",
                             events={steps - 1: [{"kind": "timeout"}]}))
        assert m.t_extra >= -1e-9
        assert m.t_true - m.d / m.v_true == pytest.approx(m.t_extra, abs=1e-12)


def test_smoothing_preserves_endpoints():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(50, 3))
    sm = smooth_positions(pts, DT)
    assert np.array_equal(sm[0], pts[0])
    assert np.array_equal(sm[-1], pts[-1])


def test_success_rules():
    # Reached the goal.
    path = constant_speed_path([(0.0, 0.0, 1.0), (59.5, 0.0, 1.0)], 1.0)
    assert compute(make_log(path)).success
    # Gave up close: planner reported no path within 3 m.
    short = constant_speed_path([(0.0, 0.0, 1.0), (57.5, 0.0, 1.0)], 1.0)
    log = make_log(short, outcome="failure", reason="no_path",
                   events={len(short) - 1: [{"kind": "no_path"}]})
    assert compute(log).success
    # Gave up far: same event but 5 m out.
    far = constant_speed_path([(0.0, 0.0, 1.0), (55.0, 0.0, 1.0)], 1.0)
    log = make_log(far, outcome="failure", reason="no_path",
                   events={len(far) - 1: [{"kind": "no_path"}]})
    assert not compute(log).success
    # Fatal collision overrides proximity.
    log = make_log(path, outcome="failure", reason="collision",
                   events={len(path) - 1: [{"kind": "collision", "severity": "fatal"}]})
    m = compute(log)
    assert not m.success and m.fatal_collision


def test_goal_reposition_moves_the_success_target():
    path = constant_speed_path([(0.0, 0.0, 1.0), (55.0, 0.0, 1.0)], 1.0)
    log = make_log(path, goal=(60.0, 0.0, 1.0),
                   events={0: [{"kind": "goal_moved", "goal": [55.2, 0.0, 1.0]}]})
    assert compute(log).success


def _failure_log(events, n=100, outcome_reason="collision"):
    path = constant_speed_path([(0.0, 0.0, 1.0), (n * DT, 0.0, 1.0)], 1.0)
    return make_log(path, outcome="failure", reason=outcome_reason, events=events)


def test_classification_leaf_window():
    n_ticks = 101
    t_end = (n_ticks - 1) * DT
    log = _failure_log({
        n_ticks - 15: [{"kind": "leaf", "trigger": t_end - 1.5, "lifetime": 1.0}],
        n_ticks - 1: [{"kind": "collision", "severity": "fatal"}],
    })
    assert classify_failure(log) == "Leaves"
    # Too stale: cloud gone more than two seconds before the end.
    log = _failure_log({
        10: [{"kind": "leaf", "trigger": 1.0, "lifetime": 1.0}],
        n_ticks - 1: [{"kind": "collision", "severity": "fatal"}],
    })
    assert classify_failure(log) == "Tree"


def test_classification_nan_and_recovery():
    log = _failure_log({
        50: [{"kind": "nan"}, {"kind": "motors_off"}],
    }, outcome_reason="motors_off")
    assert classify_failure(log) == "NaN_SFC"
    # Recovered NaN no longer claims a later unrelated crash.
    log = _failure_log({
        50: [{"kind": "nan"}],
        51: [{"kind": "nan_recovered"}],
        99: [{"kind": "collision", "severity": "fatal"}],
    })
    assert classify_failure(log) == "Tree"


def test_classification_replay_streak_is_unstable():
    events = {i: [{"kind": "replay", "age": i - 95}] for i in range(96, 101)}
    events[100].append({"kind": "collision", "severity": "fatal"})
    assert classify_failure(_failure_log(events)) == "Unstable"
    # Four in a row is not enough.
    events = {i: [{"kind": "replay", "age": 1}] for i in range(97, 101)}
    events[100].append({"kind": "collision", "severity": "fatal"})
    assert classify_failure(_failure_log(events)) == "Tree"


def test_classification_timeout_is_unstable():
    log = _failure_log({100: [{"kind": "timeout"}]}, outcome_reason="timeout")
    assert classify_failure(log) == "Unstable"


def test_classification_precedence_leaf_beats_nan():
    n_ticks = 101
    t_end = (n_ticks - 1) * DT
    log = _failure_log({
        95: [{"kind": "leaf", "trigger": t_end - 0.5, "lifetime": 1.0}],
        99: [{"kind": "nan"}, {"kind": "motors_off"}],
    }, outcome_reason="motors_off")
    assert classify_failure(log) == "Leaves"


def test_classify_rejects_successful_logs():
    path = constant_speed_path([(0.0, 0.0, 1.0), (60.0, 0.0, 1.0)], 1.0)
    with pytest.raises(ValueError):
        classify_failure(make_log(path))


def test_leaf_dodge_proxy_counts_rising_edges():
    path = constant_speed_path([(0.0, 0.0, 1.0), (10.0, 0.0, 1.0)], 1.0)
    n = len(path)
    commands = [[0.0, 0.0, 0.0]] * n
    for i in (40, 41, 42, 60):
        commands[i] = [30.0, 0.0, 0.0]
    commands[90] = [30.0, 0.0, 0.0]  # outside any leaf window
    log = make_log(
        path, commands=commands, goal=(10.0, 0.0, 1.0),
        events={35: [{"kind": "leaf", "trigger": 3.5, "lifetime": 3.0}]},
    )
    m = compute(log)
    assert m.leaf_dodges == 2


def test_emergency_episodes_and_duration():
    path = constant_speed_path([(0.0, 0.0, 1.0), (10.0, 0.0, 1.0)], 1.0)
    events = {i: [{"kind": "emergency"}] for i in (10, 11, 12, 50, 51)}
    m = compute(make_log(path, events=events, goal=(10.0, 0.0, 1.0)))
    assert m.emergency_stops == 2
    assert abs(m.emergency_stop_total - 0.5) < 1e-9


def test_minor_collisions_count():
    path = constant_speed_path([(0.0, 0.0, 1.0), (10.0, 0.0, 1.0)], 1.0)
    events = {
        20: [{"kind": "collision", "severity": "minor"}],
        70: [{"kind": "collision", "severity": "minor"}],
    }
    m = compute(make_log(path, events=events, goal=(10.0, 0.0, 1.0)))
    assert m.collisions == 2 and not m.fatal_collision


def _metric(success, t_extra=10.0, collisions=0, cause=None):
    return MissionMetrics(
        success=success, failure_cause=cause, t_true=60.0, d=50.0,
        v_true=1.0, v_p2p=0.8, t_extra=t_extra, collisions=collisions,
        fatal_collision=not success, leaf_dodges=0, emergency_stops=0,
        emergency_stop_total=0.0, terminal=(50.0, 0.0, 1.0),
    )


def test_aggregate_success_rate_and_means():
    runs = [
        _metric(True, t_extra=10.0, collisions=1),
        _metric(True, t_extra=20.0),
        _metric(False, t_extra=99.0, collisions=3, cause="Tree"),
    ]
    agg = aggregate(runs)
    assert agg["success_rate"] == "2/3"
    assert agg["mean_t_extra"] == pytest.approx(15.0)
    assert agg["collisions_total"] == 4
    assert agg["collisions_in_failed"] == 3
    assert agg["failure_causes"]["Tree"] == 1


def test_aggregate_is_permutation_invariant():
    runs = [
        _metric(True, t_extra=5.0),
        _metric(False, cause="Leaves"),
        _metric(True, t_extra=7.0, collisions=2),
    ]
    a = aggregate(runs)
    b = aggregate(list(reversed(runs)))
    assert a == b


def test_aggregate_single_run_equals_that_run():
    run = _metric(True, t_extra=12.5)
    agg = aggregate([run])
    assert agg["success_rate"] == "1/1"
    assert agg["mean_t_extra"] == pytest.approx(12.5)
    assert agg["mean_v_true"] == pytest.approx(run.v_true)
