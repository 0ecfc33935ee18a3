"""Scenario configuration and the closed-loop mission runner.

A mission ties the pieces together at fixed rates: lidar and control at
10 Hz, physics at 100 Hz. Each control tick runs the full pipeline
(sense, map, plan, corridor, control) and appends one record to the
flight log. The runner never raises on in-flight trouble; crashes,
planner dead ends, and shutdowns all end the log with a terminal record
so the metrics layer can do the judging.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corridor import Corridor, NaNDetected, Polyhedron, build_corridor, default_bbox
from .forest import ForestScene, generate_forest
from .geometry import point_at_arc, polyline_arclength, project_to_polyline
from .mapping import NoFreeVoxel, VoxelMap
from .mpc import MpcController, MpcParams, sample_reference
from .planning import GridPlanner, HeuristicParams, PlanStatus
from .qp import QpSettings
from .world import OdometryNoise, SimWorld, stream_rng, _STREAM_NAN

CONTROL_DT = 0.1
SIM_SUBSTEPS = 10            # physics runs at 100 Hz between control ticks
ARRIVE_DISTANCE = 0.3        # settle radius, well inside the 1 m success tolerance
ARRIVE_SPEED = 0.1
HOVER_SPEED = 0.15           # an emergency stop holds until the drone is this slow


@dataclass(frozen=True)
class ForestSpec:
    """What forest to grow (or none, for open-field scenarios)."""

    density_per_ha: float = 0.0
    branch_level: str = "Medium"
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, -15.0), (60.0, 15.0))
    seed: int = 0
    clearings: tuple[tuple[float, float], ...] = ()
    clearing_radius: float = 1.5


@dataclass(frozen=True)
class NanInjection:
    """Fault schedule for the corridor's non-finite-output path.

    `rate_per_min` draws a Poisson schedule from the flight's fault
    stream; `at_times` adds fixed injection instants on top. Each
    scheduled instant corrupts exactly one corridor build.
    """

    rate_per_min: float = 0.0
    at_times: tuple[float, ...] = ()


@dataclass(frozen=True)
class VariantConfig:
    """The switches separating the two system configurations under test.

    These four fields are the entire difference between the Original and
    Optimized rows of a benchmark; everything else in a scenario pair is
    asserted identical.
    """

    search_optimization: bool = True
    nan_recovery: bool = True
    gravity_init: bool = True
    forget_after: float = 3.0

    @classmethod
    def named(cls, name: str) -> "VariantConfig":
        try:
            return _VARIANTS[name]
        except KeyError:
            raise ValueError(f"unknown variant {name!r}; expected one of {sorted(_VARIANTS)}")

    @property
    def name(self) -> str:
        for label, cfg in _VARIANTS.items():
            if cfg == self:
                return label
        return "Custom"


ORIGINAL = VariantConfig(
    search_optimization=False, nan_recovery=False, gravity_init=False, forget_after=30.0
)
OPTIMIZED = VariantConfig(
    search_optimization=True, nan_recovery=True, gravity_init=True, forget_after=3.0
)
_VARIANTS = {"Original": ORIGINAL, "Optimized": OPTIMIZED}


@dataclass(frozen=True)
class ScenarioConfig:
    """One benchmark cell: a forest, a mission profile, and a system variant."""

    name: str = "scenario"
    forest: ForestSpec = field(default_factory=ForestSpec)
    variant: VariantConfig = field(default_factory=VariantConfig)
    start: tuple[float, float, float] = (0.0, 0.0, 1.0)
    goal_offset: float = 60.0
    v_target: float = 1.0
    repeats: int = 15
    seed: int = 0
    leaf_profile: str = "Off"
    nan_injection: NanInjection = field(default_factory=NanInjection)
    slope_deg: float = 0.0
    imu_sigma: float = 0.1
    heading_jitter_deg: float = 3.0
    odometry: OdometryNoise = field(default_factory=OdometryNoise)
    drone_radius: float = 0.3
    rays_per_scan: int = 2048
    plan_budget: int = 20000
    plan_horizon: float = 15.0
    timeout_s: float = 300.0
    map_resolution: float = 0.1
    inflation_radius: float = 0.4
    map_margin: float = 3.0
    map_height: float = 4.0

    def __post_init__(self) -> None:
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.v_target <= 0.0:
            raise ValueError("v_target must be positive")
        if self.plan_budget < 1:
            raise ValueError("plan_budget must be positive")
        if self.plan_horizon <= 0.0:
            raise ValueError("plan_horizon must be positive")
        if self.timeout_s <= 0.0:
            raise ValueError("timeout must be positive")
        (x0, y0), (x1, y1) = self.forest.bounds
        gx, gy = self.start[0] + self.goal_offset, self.start[1]
        if not (x0 <= gx <= x1 and y0 <= gy <= y1):
            raise ValueError("goal must lie inside the forest bounds")
        if not (x0 <= self.start[0] <= x1 and y0 <= self.start[1] <= y1):
            raise ValueError("start must lie inside the forest bounds")

    @property
    def goal(self) -> tuple[float, float, float]:
        return (self.start[0] + self.goal_offset, self.start[1], self.start[2])

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return config_from_dict(json.loads(text))


def _tupled(seq) -> tuple:
    return tuple(tuple(x) if isinstance(x, list) else x for x in seq)


def forest_from_dict(doc: dict) -> ForestSpec:
    """Rebuild a ForestSpec from its JSON form (lists become tuples)."""
    f = dict(doc)
    if "bounds" in f:
        f["bounds"] = _tupled(f["bounds"])
    if "clearings" in f:
        f["clearings"] = _tupled(f["clearings"])
    return ForestSpec(**f)


def config_from_dict(doc: dict) -> ScenarioConfig:
    """Rebuild a ScenarioConfig from its JSON form (lists become tuples)."""
    doc = dict(doc)
    forest = forest_from_dict(doc.pop("forest", {}))
    v = doc.pop("variant", {})
    if isinstance(v, str):
        variant = VariantConfig.named(v)
    else:
        variant = VariantConfig(**v)
    n = dict(doc.pop("nan_injection", {}))
    if "at_times" in n:
        n["at_times"] = tuple(n["at_times"])
    o = doc.pop("odometry", {})
    for key in ("start",):
        if key in doc:
            doc[key] = tuple(doc[key])
    return ScenarioConfig(
        forest=ForestSpec(**f),
        variant=variant,
        nan_injection=NanInjection(**n),
        odometry=OdometryNoise(**o),
        **doc,
    )


def variant_field_diff(a: ScenarioConfig, b: ScenarioConfig) -> list[str]:
    """Dotted paths of every field where two scenario configs differ.

    Used to assert that a paired Original/Optimized row differs only in
    the name and the four variant switches.
    """
    da, db = dataclasses.asdict(a), dataclasses.asdict(b)

    def walk(x, y, prefix):
        out = []
        if isinstance(x, dict) and isinstance(y, dict):
            for key in sorted(set(x) | set(y)):
                out.extend(walk(x.get(key), y.get(key), f"{prefix}{key}."))
        elif x != y:
            out.append(prefix[:-1])
        return out

    return walk(da, db, "")


def flight_seed(scenario_seed: int, flight_index: int) -> int:
    return scenario_seed ^ flight_index


def build_scene(spec: ForestSpec) -> ForestScene:
    if spec.density_per_ha <= 0.0:
        return ForestScene.empty(spec.bounds)
    return generate_forest(
        spec.density_per_ha,
        spec.branch_level,
        spec.bounds,
        spec.seed,
        clearings=spec.clearings,
        clearing_radius=spec.clearing_radius,
    )


def build_map(cfg: ScenarioConfig) -> VoxelMap:
    (x0, y0), (x1, y1) = cfg.forest.bounds
    m = cfg.map_margin
    return VoxelMap(
        lower=np.array([x0 - m, y0 - m, 0.0]),
        upper=np.array([x1 + m, y1 + m, cfg.map_height]),
        resolution=cfg.map_resolution,
        forget_after=cfg.variant.forget_after,
        inflation_radius=cfg.inflation_radius,
        # The bottom voxel layer models the known ground plane. The lidar's
        # lowest ray only strikes ground many metres ahead, so without a
        # terrain prior the strip under the drone expires from the map and
        # the planner happily routes through it.
        floor_below=cfg.map_resolution / 2.0,
    )


def nan_schedule(cfg: NanInjection, seed: int, horizon_s: float) -> list[float]:
    """Sorted injection instants for one flight (Poisson draws plus fixed times)."""
    times = [float(t) for t in cfg.at_times if 0.0 <= t < horizon_s]
    if cfg.rate_per_min > 0.0:
        rng = stream_rng(seed, _STREAM_NAN)
        rate = cfg.rate_per_min / 60.0
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= horizon_s:
                break
            times.append(t)
    return sorted(times)


def _poison(offsets: np.ndarray) -> np.ndarray:
    offsets[0] = np.nan
    return offsets


def _trim_path(path: np.ndarray, p: np.ndarray) -> np.ndarray | None:
    """Remaining portion of `path` ahead of the projection of `p`.

    Returns None when the projection already sits at (or past) the last
    waypoint, i.e. there is no segment left to follow.
    """
    if path.shape[0] < 2:
        return None
    cum = polyline_arclength(path)
    s, _ = project_to_polyline(np.asarray(p, dtype=np.float64), path, cum)
    if s >= float(cum[-1]) - 1e-9:
        return None
    head = point_at_arc(path, cum, s)
    first_ahead = int(np.searchsorted(cum, s + 1e-9))
    sub = np.vstack([head[None, :], path[first_ahead:]])
    if np.linalg.norm(sub[1] - sub[0]) < 1e-9:
        sub = sub[1:]
    if sub.shape[0] < 2:
        return None
    return sub


def _vec(x: np.ndarray) -> list[float]:
    return [float(v) for v in x]


def run_mission(
    cfg: ScenarioConfig, flight_index: int, scene: ForestScene | None = None
) -> list[dict]:
    """Fly one mission and return its complete flight log.

    The per-flight seed is the scenario seed XORed with the flight index,
    so repeats differ while staying reproducible, and a paired variant
    with the same scenario seed sees the same leaf schedule and faults.
    `scene` is an optional pre-built forest (it is fully determined by
    the config, so callers running many repeats can share one).
    """
    if scene is None:
        scene = build_scene(cfg.forest)
    seed = flight_seed(cfg.seed, flight_index)
    start = np.asarray(cfg.start, dtype=np.float64)
    goal = np.asarray(cfg.goal, dtype=np.float64)

    world = SimWorld(
        scene,
        start,
        seed=seed,
        drone_radius=cfg.drone_radius,
        rays_per_scan=cfg.rays_per_scan,
        slope_deg=cfg.slope_deg,
        imu_sigma=cfg.imu_sigma,
        heading_jitter_deg=cfg.heading_jitter_deg,
        leaf_profile=cfg.leaf_profile,
        leaf_duration=cfg.timeout_s,
        odometry_noise=cfg.odometry,
    )
    world.init_estimate_frame(cfg.variant.gravity_init)

    vmap = build_map(cfg)
    heur = HeuristicParams(w=150.0 if cfg.variant.search_optimization else 0.0)
    planner = GridPlanner(vmap, heur)
    # A shade looser than the solver's defaults (0.3 mm on position-scale
    # rows): plenty for tracking, and it keeps slow-converging solves from
    # being misread as failures by the replay logic.
    mpc = MpcController(MpcParams(), QpSettings(eps_abs=3e-4, eps_rel=3e-4))
    faults = nan_schedule(cfg.nan_injection, seed, cfg.timeout_s)

    records: list[dict] = [
        {
            "kind": "header",
            "scenario": cfg.name,
            "variant": cfg.variant.name,
            "flight": flight_index,
            "seed": seed,
            "start": _vec(start),
            "goal": _vec(goal),
            "v_target": cfg.v_target,
            "j_max": mpc.params.j_max,
            "control_dt": CONTROL_DT,
            "trees": len(scene.trees),
        }
    ]

    effective_goal = goal.copy()
    current_path: np.ndarray | None = None
    path_to_goal = False
    pending_state = None
    pending_to_goal = False
    awaiting_recovery = False
    emergency_hold = False
    overrun_streak = 0
    leaf_logged: set[int] = set()
    fault_idx = 0
    minor_seen = 0

    def end(k: int, t: float, outcome: str, reason: str = "") -> list[dict]:
        records.append(
            {
                "kind": "end",
                "tick": k,
                "t": t,
                "outcome": outcome,
                "reason": reason,
                "p": _vec(world.p),
                "pe": _vec(world.to_estimate(world.p)),
            }
        )
        return records

    k = 0
    while True:
        t = k * CONTROL_DT
        events: list[dict] = []

        if t >= cfg.timeout_s:
            events.append({"kind": "timeout"})
            _tick_record(records, k, t, world, world.odometry(), np.zeros(3), events)
            return end(k, t, "timeout")

        scan = world.scan()
        vmap.integrate_scan(scan, t)
        p_e, v_e, a_e = world.odometry()

        for i, ev in enumerate(world.leaf_events):
            if ev.trigger_time <= t and i not in leaf_logged:
                if ev.skipped:
                    leaf_logged.add(i)
                elif ev.points is not None:
                    leaf_logged.add(i)
                    events.append(
                        {"kind": "leaf", "trigger": ev.trigger_time, "lifetime": ev.lifetime}
                    )

        if (
            k > 0
            and float(np.linalg.norm(p_e - effective_goal)) <= ARRIVE_DISTANCE
            and float(np.linalg.norm(v_e)) <= ARRIVE_SPEED
        ):
            _tick_record(records, k, t, world, (p_e, v_e, a_e), np.zeros(3), events)
            return end(k, t, "success")

        gi = vmap.world_to_index(effective_goal)
        if vmap.inflated_occupied(gi, t):
            try:
                free = vmap.nearest_free(effective_goal, t)
                effective_goal = vmap.index_to_center(free)
                events.append({"kind": "goal_moved", "goal": _vec(effective_goal)})
            except NoFreeVoxel:
                events.append({"kind": "no_path"})
                _tick_record(records, k, t, world, (p_e, v_e, a_e), np.zeros(3), events)
                return end(k, t, "no_path", "goal pocket occupied")

        emergency = False
        if emergency_hold:
            if float(np.linalg.norm(v_e)) > HOVER_SPEED:
                emergency = True
            else:
                emergency_hold = False

        plan_start = p_e
        engulfed = False
        if not emergency:
            si = vmap.world_to_index(p_e)
            if not vmap.in_bounds(si):
                events.append({"kind": "no_path"})
                _tick_record(records, k, t, world, (p_e, v_e, a_e), np.zeros(3), events)
                return end(k, t, "no_path", "estimate left the map")
            if vmap.inflated_occupied(si, t):
                # The start voxel reads occupied (typically a leaf cloud on
                # top of the drone). Plan from the closest free voxel and
                # accept the sideways reference jump that causes.
                engulfed = True
                try:
                    plan_start = vmap.index_to_center(vmap.nearest_free(p_e, t))
                except NoFreeVoxel:
                    emergency = True

        # Plan toward the goal itself once it is inside the planning horizon,
        # and toward a free sub-goal on the horizon sphere otherwise. Running
        # out of routes to a sub-goal is a local, transient condition; only
        # the true goal becoming unreachable ends the mission.
        #
        # A search that keeps dying at the budget tick after tick covers the
        # same ground every time, so waiting it out cannot help. Pull the
        # sub-goal in instead (half the horizon per second of sustained
        # failure, floored at a couple of metres): a short hop completes,
        # the hop moves the start, and the next full-horizon search faces a
        # different problem.
        plan_goal = effective_goal
        local_goal = False
        if not emergency:
            horizon = cfg.plan_horizon
            if overrun_streak >= 10:
                horizon = max(2.0, cfg.plan_horizon * 0.5 ** (overrun_streak // 10))
            offset = effective_goal - plan_start
            dist_goal = float(np.linalg.norm(offset))
            if dist_goal > horizon:
                local_goal = True
                point = plan_start + offset * (horizon / dist_goal)
                if vmap.inflated_occupied(vmap.world_to_index(point), t):
                    try:
                        point = vmap.index_to_center(vmap.nearest_free(point, t))
                    except NoFreeVoxel:
                        emergency = True
                plan_goal = point

        replaying_overrun = False
        if not emergency:
            if pending_state is not None:
                outcome = planner.resume(pending_state, t, cfg.plan_budget)
            else:
                prev = current_path if cfg.variant.search_optimization else None
                pending_to_goal = not local_goal
                outcome = planner.plan(
                    plan_start, plan_goal, t, prev_path=prev, budget=cfg.plan_budget
                )
            if outcome.status is PlanStatus.PATH:
                current_path = outcome.waypoints
                path_to_goal = pending_to_goal
                pending_state = None
                overrun_streak = 0
            elif outcome.status is PlanStatus.BUDGET_EXCEEDED:
                overrun_streak += 1
                # No plan this control period. The optimized search suspends
                # and picks up where it left off next tick; the original one
                # throws the partial search away and starts over, which in
                # cluttered spots means overrunning again and again until
                # the map changes around it. Either way the drone keeps to
                # its stale path while that stays clear, else holds.
                pending_state = outcome.state if cfg.variant.search_optimization else None
                events.append({"kind": "plan_overrun"})
                replaying_overrun = True
            elif local_goal:
                emergency = True
            else:
                events.append({"kind": "no_path"})
                _tick_record(records, k, t, world, (p_e, v_e, a_e), np.zeros(3), events)
                return end(k, t, "no_path", "search space exhausted")

        sub = None
        if not emergency:
            if current_path is None:
                emergency = True
            else:
                sub = _trim_path(current_path, p_e)
                if sub is not None and replaying_overrun:
                    # No fresh plan this tick; keep flying the old path only
                    # while its next two legs still read clear on the map.
                    mid = min(2, sub.shape[0] - 1)
                    blocked = vmap.segment_blocked(sub[0], sub[1], t) or (
                        mid > 1 and vmap.segment_blocked(sub[1], sub[2], t)
                    )
                    if blocked:
                        emergency = True

        # Seed the first corridor segment at the estimate itself rather than
        # at its projection onto the path: shrunken boxes keep only a
        # centimetre of clearance around their seed segment, so ordinary
        # cross-track error would otherwise leave the current state outside
        # the first box and make every QP infeasible from the start.
        track = None
        if not emergency and sub is not None:
            track = sub.copy()
            track[0] = p_e
            if float(np.linalg.norm(track[1] - track[0])) < 1e-6:
                track = track[1:]
            if track.shape[0] < 2:
                track = None

        corridor: Corridor | Polyhedron
        if not emergency and track is not None and engulfed:
            # A box grown from inside an occupied region collapses to a
            # sliver and pins the controller. Substitute the default box
            # around the drone and keep tracking: flying unconstrained for
            # the blob's lifetime beats freezing with momentum.
            corridor = default_bbox(p_e, 1.0)
            refs, arcs = sample_reference(
                track, p_e, cfg.v_target, mpc.params, ends_at_goal=path_to_goal
            )
        elif not emergency and track is not None:
            corrupt = None
            if fault_idx < len(faults) and t >= faults[fault_idx]:
                corrupt = _poison
                fault_idx += 1
            try:
                corridor = build_corridor(vmap, track, t, corrupt=corrupt)
                if awaiting_recovery:
                    events.append({"kind": "nan_recovered"})
                    awaiting_recovery = False
                refs, arcs = sample_reference(
                    track, p_e, cfg.v_target, mpc.params, ends_at_goal=path_to_goal
                )
            except NaNDetected:
                events.append({"kind": "nan"})
                if not cfg.variant.nan_recovery:
                    events.append({"kind": "motors_off"})
                    _tick_record(records, k, t, world, (p_e, v_e, a_e), np.zeros(3), events)
                    return end(k, t, "motors_off", "non-finite corridor")
                awaiting_recovery = True
                emergency_hold = True
                emergency = True
        elif not emergency:
            # Path fully consumed but the settle test has not fired yet:
            # home in on the goal inside a local box.
            corridor = default_bbox(p_e, 1.0)
            refs = np.tile(effective_goal, (mpc.params.horizon, 1))
            arcs = np.zeros(mpc.params.horizon)

        if emergency:
            events.append({"kind": "emergency"})
            corridor = default_bbox(p_e, 1.0)
            refs = np.tile(p_e, (mpc.params.horizon, 1))
            arcs = np.zeros(mpc.params.horizon)

        control = mpc.step(p_e, v_e, a_e, refs, arcs, corridor)
        if control.replay_age > 0:
            events.append({"kind": "replay", "age": control.replay_age})
        if control.unstable:
            events.append({"kind": "unstable_command"})
        if cfg.variant.search_optimization and control.replay_age >= 3:
            # Three straight solver failures mean the corridor has turned
            # against the current state; coasting on stale commands from
            # here is how drones meet trunks. Brake and retry from hover.
            emergency_hold = True
        u = control.jerk

        fatal = False
        for _ in range(SIM_SUBSTEPS):
            world.step(u)
            if world.fatal:
                fatal = True
                break
        if world.collision_count > minor_seen:
            for _ in range(world.collision_count - minor_seen):
                events.append({"kind": "collision", "severity": "minor"})
            minor_seen = world.collision_count
        if fatal:
            events.append({"kind": "collision", "severity": "fatal", "what": world.fatal_kind})

        _tick_record(records, k, t, world, (p_e, v_e, a_e), u, events)
        if fatal:
            return end(k, t + CONTROL_DT, "fatal", world.fatal_kind)
        k += 1


def _tick_record(records, k, t, world, odo, u, events) -> None:
    p_e, v_e, a_e = odo
    records.append(
        {
            "kind": "tick",
            "tick": k,
            "t": t,
            "p": _vec(world.p),
            "v": _vec(world.v),
            "a": _vec(world.a),
            "pe": _vec(p_e),
            "ve": _vec(v_e),
            "ae": _vec(a_e),
            "u": _vec(u),
            "events": events,
        }
    )


def write_log(records: list[dict], path: str | Path) -> None:
    """Write a flight log as JSON lines (one record per line, sorted keys)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")


def read_log(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
