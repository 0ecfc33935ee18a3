"""Closed-loop simulation world: flight dynamics, sensing, disturbances.

The world integrates true triple-integrator dynamics at a fine tick and
exposes everything the flight stack is allowed to see through an estimate
frame. That frame is constructed once at takeoff from the believed gravity
direction; starting on sloped ground with no gravity alignment leaves the
whole estimate tilted, which is exactly the failure the alignment step
exists to prevent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import step_triple_integrator
from .forest import (
    CONTACT_FATAL,
    CONTACT_MINOR,
    CONTACT_NONE,
    CapsuleSet,
    ForestScene,
    XYIndex,
    build_xy_index,
)
from .geometry import rotation_about_y, rotation_aligning
from .lidar import MAX_RANGE, cast_rays, ray_directions

GRAVITY = 9.81
IMU_SAMPLE_COUNT = 200

LEAF_RATES_PER_MIN = {"Off": 0.0, "Rarely": 0.5, "Occasionally": 2.0, "Often": 6.0}
LEAF_CONE_HALF_ANGLE_RAD = math.radians(45.0)
LEAF_MIN_COURSE_SPEED = 0.3

# Independent RNG stream tags so one subsystem's draw count never shifts
# another's sequence.
_STREAM_IMU = 1
_STREAM_LEAF = 2
_STREAM_HEADING = 3
_STREAM_ODOMETRY = 4
_STREAM_NAN = 5


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, stream))))


def gravity_init(samples: np.ndarray) -> np.ndarray:
    """Unit gravity direction from averaged accelerometer samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape != (IMU_SAMPLE_COUNT, 3):
        raise ValueError(f"expected ({IMU_SAMPLE_COUNT}, 3) samples, got {samples.shape}")
    mean = samples.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-9:
        raise ValueError("gravity samples average to zero")
    return mean / norm


def imu_samples(rng: np.random.Generator, slope_deg: float, sigma: float) -> np.ndarray:
    """Accelerometer readings of a drone resting on sloped ground.

    The body is pitched by `slope_deg` about y, so gravity appears tilted
    in body coordinates. Readings follow the convention that a level,
    resting sensor reports (0, 0, -g).
    """
    body_from_world = rotation_about_y(math.radians(slope_deg)).T
    true_gravity = body_from_world @ np.array([0.0, 0.0, -GRAVITY])
    noise = rng.normal(0.0, sigma, size=(IMU_SAMPLE_COUNT, 3))
    return true_gravity[None, :] + noise


@dataclass
class LeafCloudEvent:
    """A cloud of leaves kicked loose by flying through foliage.

    The trigger time and the offsets are drawn when the schedule is built;
    the offset is expressed relative to the drone's course, so when the
    trigger time arrives the cloud materializes ahead of wherever the
    drone is actually heading. While active, `points` are appended to
    every lidar scan, so the map sees a solid little blob that was never
    there.
    """

    trigger_time: float
    lifetime: float
    offset: np.ndarray
    point_offsets: np.ndarray
    center: np.ndarray | None = None
    points: np.ndarray | None = None
    skipped: bool = False

    @property
    def voxel_count(self) -> int:
        return self.point_offsets.shape[0]

    def active(self, t: float) -> bool:
        return self.trigger_time <= t <= self.trigger_time + self.lifetime


def spawn_leaf_events(
    profile: str,
    seed: int,
    duration: float,
    lifetime: float = 1.0,
    voxel_count: int = 40,
    blob_radius: float = 0.5,
) -> list[LeafCloudEvent]:
    """Poisson schedule of leaf-cloud events for one flight."""
    if profile not in LEAF_RATES_PER_MIN:
        raise ValueError(f"unknown leaf profile {profile!r}")
    rate = LEAF_RATES_PER_MIN[profile] / 60.0
    rng = stream_rng(seed, _STREAM_LEAF)
    events: list[LeafCloudEvent] = []
    if rate <= 0.0:
        return events
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t > duration:
            break
        # Course-relative: the cloud appears in a forward cone, because the
        # disturbance comes from foliage the drone is flying into. The reach
        # keeps the cloud's inflated footprint off the drone's own voxel, so
        # an event is always something to avoid, never an instant engulfing.
        azimuth = rng.uniform(-LEAF_CONE_HALF_ANGLE_RAD, LEAF_CONE_HALF_ANGLE_RAD)
        reach = rng.uniform(1.3, 2.6)
        dz = rng.uniform(-0.7, 0.1)
        offset = np.array([reach * math.cos(azimuth), reach * math.sin(azimuth), dz])
        raw = rng.normal(size=(voxel_count, 3))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        radii = blob_radius * rng.random(voxel_count) ** (1.0 / 3.0)
        events.append(
            LeafCloudEvent(
                trigger_time=float(t),
                lifetime=lifetime,
                offset=offset,
                point_offsets=raw * radii[:, None],
            )
        )
    return events


@dataclass(frozen=True)
class OdometryNoise:
    """Optional estimate degradation beyond the frame tilt.

    `sigma_pos` is white position noise per reading; `walk_sigma` drives a
    random-walk drift in m per sqrt(second). Both default to off: the
    localization stack being emulated holds endpoint drift near a decimeter
    over hundred-meter flights, which is negligible at this scale.
    """

    sigma_pos: float = 0.0
    walk_sigma: float = 0.0


class SimWorld:
    """Single-drone simulation against a capsule forest.

    The estimate frame E relates to the true world W through a rotation
    about the start point: p_E = R (p_W - s0) + s0. Commands arrive in E
    and are rotated back before touching the true dynamics. With perfect
    gravity alignment R is the identity.
    """

    def __init__(
        self,
        scene: ForestScene,
        start: np.ndarray,
        seed: int = 0,
        sim_dt: float = 0.01,
        drone_radius: float = 0.3,
        rays_per_scan: int = 2048,
        max_range: float = MAX_RANGE,
        ground_z: float = 0.0,
        slope_deg: float = 0.0,
        imu_sigma: float = 0.1,
        heading_jitter_deg: float = 0.0,
        leaf_profile: str = "Off",
        leaf_duration: float = 300.0,
        leaf_lifetime: float = 1.0,
        odometry_noise: OdometryNoise | None = None,
    ):
        self.scene = scene
        self.capsules: CapsuleSet = scene.capsules()
        self.index: XYIndex = build_xy_index(self.capsules, pad=max(0.4, drone_radius))
        self.sim_dt = sim_dt
        self.drone_radius = drone_radius
        self.rays_per_scan = rays_per_scan
        self.max_range = max_range
        self.ground_z = ground_z
        self.slope_deg = slope_deg
        self.imu_sigma = imu_sigma
        self.seed = seed

        self.p = np.asarray(start, dtype=np.float64).copy()
        self.v = np.zeros(3)
        self.a = np.zeros(3)
        self.s0 = self.p.copy()
        self.tick = 0

        self.fatal = False
        self.fatal_kind: str | None = None
        self.collision_count = 0
        self._in_contact = False

        self.R_est = np.eye(3)
        self._ray_counter = 0
        jitter = math.radians(heading_jitter_deg)
        self.heading_yaw = float(
            stream_rng(seed, _STREAM_HEADING).uniform(-jitter, jitter)
        ) if jitter > 0.0 else 0.0

        self.leaf_events = spawn_leaf_events(
            leaf_profile, seed, leaf_duration, lifetime=leaf_lifetime
        )
        self.odometry_noise = odometry_noise
        self._odo_rng = stream_rng(seed, _STREAM_ODOMETRY)
        self._drift = np.zeros(3)

    @property
    def t(self) -> float:
        return self.tick * self.sim_dt

    def init_estimate_frame(self, use_gravity_init: bool) -> None:
        """Fix the estimate frame from the believed gravity direction.

        Without alignment the system trusts the body z axis, so any slope
        under the landing gear tilts the whole estimate. With alignment the
        residual is just the averaged sensor noise.
        """
        rng = stream_rng(self.seed, _STREAM_IMU)
        samples = imu_samples(rng, self.slope_deg, self.imu_sigma)
        if use_gravity_init:
            believed_down_body = gravity_init(samples)
        else:
            believed_down_body = np.array([0.0, 0.0, -1.0])
        world_from_body = rotation_about_y(math.radians(self.slope_deg))
        believed_down_world = world_from_body @ believed_down_body
        self.R_est = rotation_aligning(believed_down_world, np.array([0.0, 0.0, -1.0]))

    def to_estimate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.R_est @ (pts - self.s0) + self.s0
        return (pts - self.s0) @ self.R_est.T + self.s0

    def command_to_world(self, u_est: np.ndarray) -> np.ndarray:
        return self.R_est.T @ np.asarray(u_est, dtype=np.float64)

    def step(self, u_est: np.ndarray) -> int:
        """Advance one tick under the commanded (estimate-frame) jerk.

        Returns the contact severity observed after the step. Fatal
        contact latches `self.fatal`; minor contact counts once per
        contiguous episode.
        """
        u_true = self.command_to_world(u_est)
        self.p, self.v, self.a = step_triple_integrator(
            self.p, self.v, self.a, u_true, self.sim_dt
        )
        self.tick += 1
        severity = self._contact()
        if severity == CONTACT_FATAL:
            if not self.fatal:
                self.fatal = True
                self.fatal_kind = "ground" if self.p[2] - self.drone_radius <= self.ground_z else "trunk"
            self._in_contact = True
        elif severity == CONTACT_MINOR:
            if not self._in_contact:
                self.collision_count += 1
            self._in_contact = True
        else:
            self._in_contact = False
        return severity

    def _contact(self) -> int:
        from .forest import check_collision

        if self.capsules.count == 0:
            if self.p[2] - self.drone_radius <= self.ground_z:
                return CONTACT_FATAL
            return CONTACT_NONE
        return check_collision(
            self.p, self.capsules, self.index, self.drone_radius, self.ground_z
        )

    def scan(self) -> np.ndarray:
        """One lidar sweep, returned as estimate-frame points."""
        dirs = ray_directions(self._ray_counter, self.rays_per_scan, self.heading_yaw)
        self._ray_counter += self.rays_per_scan
        if self.capsules.count > 0:
            pts, _ = cast_rays(
                self.p, dirs,
                self.capsules.seg_a, self.capsules.seg_b, self.capsules.radius,
                self.max_range, self.ground_z,
            )
        else:
            pts, _ = cast_rays(
                self.p, dirs,
                np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
                self.max_range, self.ground_z,
            )
        extra = []
        t = self.t
        for ev in self.leaf_events:
            if ev.skipped or not ev.active(t):
                continue
            if ev.points is None:
                # Leaves come loose because the drone is pushing through
                # foliage; a hovering drone disturbs nothing, so triggers
                # that land during a hold simply never materialize.
                speed_xy = math.hypot(self.v[0], self.v[1])
                if speed_xy < LEAF_MIN_COURSE_SPEED:
                    ev.skipped = True
                    continue
                course = math.atan2(self.v[1], self.v[0])
                c, s = math.cos(course), math.sin(course)
                off = ev.offset
                rotated = np.array(
                    [c * off[0] - s * off[1], s * off[0] + c * off[1], off[2]]
                )
                ev.center = self.p + rotated
                ev.points = ev.center[None, :] + ev.point_offsets
            extra.append(ev.points)
        if extra:
            pts = np.concatenate([pts] + extra, axis=0)
        return self.to_estimate(pts)

    def leaf_active(self, t: float) -> bool:
        """Whether any materialized leaf cloud is active at time t."""
        return any(ev.points is not None and ev.active(t) for ev in self.leaf_events)

    def odometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Estimate-frame position, velocity, acceleration."""
        p_e = self.to_estimate(self.p)
        v_e = self.R_est @ self.v
        a_e = self.R_est @ self.a
        cfg = self.odometry_noise
        if cfg is not None and (cfg.sigma_pos > 0.0 or cfg.walk_sigma > 0.0):
            if cfg.walk_sigma > 0.0:
                # Called at the control rate; scale the walk by that period.
                self._drift += self._odo_rng.normal(0.0, cfg.walk_sigma * math.sqrt(0.1), 3)
                p_e = p_e + self._drift
            if cfg.sigma_pos > 0.0:
                p_e = p_e + self._odo_rng.normal(0.0, cfg.sigma_pos, 3)
        return p_e, v_e, a_e
