"""Procedural forest scenes built from capsule primitives.

A scene is a flat ground plane plus a set of trees. Each tree is one
vertical trunk capsule and a handful of drooping branch capsules in the
low-hanging band where the drone flies. Capsules keep both ray casting
and collision checks exact and cheap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

TRUNK_HEIGHT_RANGE = (4.0, 7.0)
TRUNK_RADIUS_RANGE = (0.10, 0.25)
BRANCH_RADIUS_RANGE = (0.02, 0.05)
BRANCH_LENGTH_RANGE = (0.6, 1.6)
BRANCH_DROOP_DEG_RANGE = (-35.0, -5.0)
BRANCH_BAND = (0.5, 3.0)

# Branches per tree, inclusive bounds, by qualitative level.
BRANCH_COUNT_RANGE = {"Low": (1, 3), "Medium": (3, 6), "High": (6, 11)}

KIND_TRUNK = 0
KIND_BRANCH = 1


def classify_density(trees_per_ha: float) -> str:
    """Complexity label for a stem density, boreal-plot convention."""
    if trees_per_ha < 700.0:
        return "Easy"
    if trees_per_ha < 1500.0:
        return "Medium"
    return "Difficult"


@dataclass(frozen=True)
class Branch:
    base: tuple[float, float, float]
    tip: tuple[float, float, float]
    radius: float


@dataclass(frozen=True)
class Tree:
    """One trunk with its branches. Trunk runs from the ground to `height`."""

    x: float
    y: float
    height: float
    radius: float
    branches: tuple[Branch, ...] = ()


@dataclass(frozen=True)
class CapsuleSet:
    """Flat capsule arrays for the numeric kernels.

    `kind` is KIND_TRUNK or KIND_BRANCH per row; trunks come first.
    """

    seg_a: np.ndarray
    seg_b: np.ndarray
    radius: np.ndarray
    kind: np.ndarray

    @property
    def count(self) -> int:
        return self.seg_a.shape[0]


@dataclass
class ForestScene:
    trees: list[Tree]
    bounds: tuple[tuple[float, float], tuple[float, float]]
    density_request: float
    branch_level: str
    seed: int
    _capsules: CapsuleSet | None = field(default=None, repr=False, compare=False)

    @property
    def area_m2(self) -> float:
        (x0, y0), (x1, y1) = self.bounds
        return (x1 - x0) * (y1 - y0)

    @property
    def realized_density(self) -> float:
        """Trees per hectare actually placed."""
        return len(self.trees) / self.area_m2 * 10_000.0

    @property
    def complexity(self) -> str:
        return classify_density(self.density_request)

    def capsules(self) -> CapsuleSet:
        if self._capsules is None:
            self._capsules = _flatten(self.trees)
        return self._capsules

    def to_json(self) -> str:
        doc = {
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "branch_level": self.branch_level,
            "complexity": self.complexity,
            "density_request": self.density_request,
            "realized_density": self.realized_density,
            "seed": self.seed,
            "trees": [
                {
                    "x": t.x,
                    "y": t.y,
                    "height": t.height,
                    "radius": t.radius,
                    "branches": [
                        {"base": list(b.base), "tip": list(b.tip), "radius": b.radius}
                        for b in t.branches
                    ],
                }
                for t in self.trees
            ],
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ForestScene":
        doc = json.loads(text)
        trees = [
            Tree(
                x=t["x"],
                y=t["y"],
                height=t["height"],
                radius=t["radius"],
                branches=tuple(
                    Branch(base=tuple(b["base"]), tip=tuple(b["tip"]), radius=b["radius"])
                    for b in t["branches"]
                ),
            )
            for t in doc["trees"]
        ]
        return cls(
            trees=trees,
            bounds=(tuple(doc["bounds"][0]), tuple(doc["bounds"][1])),
            density_request=doc["density_request"],
            branch_level=doc["branch_level"],
            seed=doc["seed"],
        )

    @classmethod
    def empty(cls, bounds) -> "ForestScene":
        """Treeless scene, for baselines and sensor fixtures."""
        return cls(trees=[], bounds=bounds, density_request=0.0, branch_level="Low", seed=0)


def _flatten(trees: list[Tree]) -> CapsuleSet:
    n_trunk = len(trees)
    n_branch = sum(len(t.branches) for t in trees)
    n = n_trunk + n_branch
    seg_a = np.zeros((n, 3))
    seg_b = np.zeros((n, 3))
    radius = np.zeros(n)
    kind = np.zeros(n, dtype=np.uint8)
    for i, t in enumerate(trees):
        seg_a[i] = (t.x, t.y, 0.0)
        seg_b[i] = (t.x, t.y, t.height)
        radius[i] = t.radius
    j = n_trunk
    for t in trees:
        for b in t.branches:
            seg_a[j] = b.base
            seg_b[j] = b.tip
            radius[j] = b.radius
            kind[j] = KIND_BRANCH
            j += 1
    return CapsuleSet(seg_a=seg_a, seg_b=seg_b, radius=radius, kind=kind)


def generate_forest(
    density_per_ha: float,
    branch_level: str,
    bounds: tuple[tuple[float, float], tuple[float, float]],
    seed: int,
    clearings: tuple[tuple[float, float], ...] = (),
    clearing_radius: float = 1.5,
) -> ForestScene:
    """Place trunks by Poisson-disk dart throwing, then grow branches.

    Minimum trunk spacing is 0.6 / sqrt(density per m^2), which keeps the
    target count reachable by rejection sampling (packing fraction 0.36)
    while preventing the clumping a plain uniform draw would produce.
    Discs of `clearing_radius` around each clearing point stay trunk-free
    so start and goal hovers are never born inside a tree.

    Raises ValueError when the requested count cannot be placed.
    """
    if density_per_ha <= 0.0:
        raise ValueError("density must be positive; use ForestScene.empty for no trees")
    if branch_level not in BRANCH_COUNT_RANGE:
        raise ValueError(f"unknown branch level {branch_level!r}")
    (x0, y0), (x1, y1) = bounds
    area = (x1 - x0) * (y1 - y0)
    if area < 100.0:
        raise ValueError("forest bounds must cover at least 100 m^2")

    density_m2 = density_per_ha / 10_000.0
    target = int(round(density_m2 * area))
    spacing = 0.6 / math.sqrt(density_m2)
    rng = np.random.Generator(np.random.PCG64(seed))

    # Occupancy hash with cells no larger than the spacing; a candidate
    # only needs to look at its own and adjacent cells.
    cell = spacing
    nx = max(1, int(math.ceil((x1 - x0) / cell)))
    ny = max(1, int(math.ceil((y1 - y0) / cell)))
    grid: dict[tuple[int, int], list[tuple[float, float]]] = {}

    accepted: list[tuple[float, float]] = []
    attempts = 0
    max_attempts = max(2000, 400 * target)
    spacing2 = spacing * spacing
    while len(accepted) < target and attempts < max_attempts:
        attempts += 1
        px = x0 + rng.random() * (x1 - x0)
        py = y0 + rng.random() * (y1 - y0)
        clear = False
        for cx, cy in clearings:
            if (px - cx) ** 2 + (py - cy) ** 2 < clearing_radius * clearing_radius:
                clear = True
                break
        if clear:
            continue
        ci = int((px - x0) / cell)
        cj = int((py - y0) / cell)
        ok = True
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                for qx, qy in grid.get((ci + di, cj + dj), ()):
                    if (px - qx) ** 2 + (py - qy) ** 2 < spacing2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if not ok:
            continue
        accepted.append((px, py))
        grid.setdefault((ci, cj), []).append((px, py))

    if len(accepted) < target:
        raise ValueError(
            f"could not place {target} trunks at spacing {spacing:.2f} m "
            f"after {attempts} attempts"
        )

    lo_count, hi_count = BRANCH_COUNT_RANGE[branch_level]
    trees: list[Tree] = []
    for px, py in accepted:
        height = rng.uniform(*TRUNK_HEIGHT_RANGE)
        t_radius = rng.uniform(*TRUNK_RADIUS_RANGE)
        n_branches = int(rng.integers(lo_count, hi_count + 1))
        branches = []
        for _ in range(n_branches):
            azimuth = rng.uniform(0.0, 2.0 * math.pi)
            droop = math.radians(rng.uniform(*BRANCH_DROOP_DEG_RANGE))
            length = rng.uniform(*BRANCH_LENGTH_RANGE)
            # Sample the base high enough that the drooping tip stays
            # inside the branch band.
            dip = -length * math.sin(droop)
            base_z = rng.uniform(BRANCH_BAND[0] + dip, BRANCH_BAND[1])
            b_radius = rng.uniform(*BRANCH_RADIUS_RANGE)
            direction = (
                math.cos(droop) * math.cos(azimuth),
                math.cos(droop) * math.sin(azimuth),
                math.sin(droop),
            )
            base = (px, py, base_z)
            tip = (
                px + length * direction[0],
                py + length * direction[1],
                base_z + length * direction[2],
            )
            branches.append(Branch(base=base, tip=tip, radius=b_radius))
        trees.append(
            Tree(x=px, y=py, height=height, radius=t_radius, branches=tuple(branches))
        )

    return ForestScene(
        trees=trees,
        bounds=bounds,
        density_request=density_per_ha,
        branch_level=branch_level,
        seed=seed,
    )


@dataclass(frozen=True)
class XYIndex:
    """Uniform xy-cell index over capsules, CSR layout.

    Each capsule is registered in every cell its padded footprint touches,
    so a point query only inspects the single cell containing the point.
    The pad must be at least the query radius for that to be sound.
    """

    x0: float
    y0: float
    cell: float
    nx: int
    ny: int
    start: np.ndarray
    items: np.ndarray
    pad: float


def build_xy_index(capsules: CapsuleSet, cell: float = 1.0, pad: float = 0.4) -> XYIndex:
    n = capsules.count
    xs = np.stack([capsules.seg_a[:, 0], capsules.seg_b[:, 0]], axis=1)
    ys = np.stack([capsules.seg_a[:, 1], capsules.seg_b[:, 1]], axis=1)
    margin = capsules.radius + pad
    x_lo = xs.min(axis=1) - margin
    x_hi = xs.max(axis=1) + margin
    y_lo = ys.min(axis=1) - margin
    y_hi = ys.max(axis=1) + margin

    if n == 0:
        return XYIndex(
            x0=0.0, y0=0.0, cell=cell, nx=1, ny=1,
            start=np.zeros(2, dtype=np.int64), items=np.zeros(0, dtype=np.int64), pad=pad,
        )

    x0 = float(x_lo.min())
    y0 = float(y_lo.min())
    nx = int(np.floor((x_hi.max() - x0) / cell)) + 1
    ny = int(np.floor((y_hi.max() - y0) / cell)) + 1

    cells_per_capsule = []
    for i in range(n):
        ci0 = int((x_lo[i] - x0) / cell)
        ci1 = int((x_hi[i] - x0) / cell)
        cj0 = int((y_lo[i] - y0) / cell)
        cj1 = int((y_hi[i] - y0) / cell)
        cells = [
            ci * ny + cj
            for ci in range(ci0, ci1 + 1)
            for cj in range(cj0, cj1 + 1)
        ]
        cells_per_capsule.append(cells)

    counts = np.zeros(nx * ny + 1, dtype=np.int64)
    for cells in cells_per_capsule:
        for c in cells:
            counts[c + 1] += 1
    start = np.cumsum(counts)
    items = np.zeros(start[-1], dtype=np.int64)
    cursor = start[:-1].copy()
    for i, cells in enumerate(cells_per_capsule):
        for c in cells:
            items[cursor[c]] = i
            cursor[c] += 1
    return XYIndex(
        x0=x0, y0=y0, cell=cell, nx=nx, ny=ny, start=start, items=items, pad=pad
    )


CONTACT_NONE = 0
CONTACT_MINOR = 1
CONTACT_FATAL = 2


@njit(cache=True)
def _capsule_point_dist(px, py, pz, ax, ay, az, bx, by, bz):
    ux = bx - ax
    uy = by - ay
    uz = bz - az
    wx = px - ax
    wy = py - ay
    wz = pz - az
    denom = ux * ux + uy * uy + uz * uz
    s = 0.0
    if denom > 0.0:
        s = (wx * ux + wy * uy + wz * uz) / denom
        if s < 0.0:
            s = 0.0
        elif s > 1.0:
            s = 1.0
    dx = wx - s * ux
    dy = wy - s * uy
    dz = wz - s * uz
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _contact_kernel(
    px, py, pz,
    seg_a, seg_b, radius, kind,
    x0, y0, cell, nx, ny, start, items,
    drone_radius, ground_z,
):
    severity = CONTACT_NONE
    if pz - drone_radius <= ground_z:
        return CONTACT_FATAL
    ci = int((px - x0) / cell)
    cj = int((py - y0) / cell)
    if ci < 0 or ci >= nx or cj < 0 or cj >= ny:
        return severity
    c = ci * ny + cj
    for k in range(start[c], start[c + 1]):
        i = items[k]
        d = _capsule_point_dist(
            px, py, pz,
            seg_a[i, 0], seg_a[i, 1], seg_a[i, 2],
            seg_b[i, 0], seg_b[i, 1], seg_b[i, 2],
        )
        if d <= radius[i] + drone_radius:
            if kind[i] == KIND_TRUNK:
                return CONTACT_FATAL
            severity = CONTACT_MINOR
    return severity


def check_collision(
    position: np.ndarray,
    capsules: CapsuleSet,
    index: XYIndex,
    drone_radius: float = 0.3,
    ground_z: float = 0.0,
) -> int:
    """Contact severity of a drone sphere against the scene.

    Trunk or ground contact is fatal; branch contact is minor. The index
    pad must cover `drone_radius` or nearby capsules could be missed.
    """
    if drone_radius <= 0.0:
        raise ValueError("drone radius must be positive")
    if index.pad < drone_radius:
        raise ValueError("xy index pad smaller than query radius")
    p = np.asarray(position, dtype=np.float64)
    return int(
        _contact_kernel(
            p[0], p[1], p[2],
            capsules.seg_a, capsules.seg_b, capsules.radius, capsules.kind,
            index.x0, index.y0, index.cell, index.nx, index.ny,
            index.start, index.items,
            drone_radius, ground_z,
        )
    )
