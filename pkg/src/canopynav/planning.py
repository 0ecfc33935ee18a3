"""Path-consistent grid planner over the inflated occupancy map.

The search is 26-connected A* with Euclidean edge costs. When a previous
path is supplied, the heuristic is biased to keep the new path near the old
one close to the start (which keeps replans from flip-flopping between
homotopy classes), and once the search has expanded past the follow horizon
it stops re-inserting nodes near the start altogether. Without a previous
path both mechanisms are off and the search is plain A* with an admissible
Euclidean heuristic, so costs match Dijkstra exactly.

Path costs are tracked as integer step counts (straight / planar-diagonal /
cubic-diagonal) and converted to meters through one shared expression, so
mathematically equal costs are bit-identical floats.

A search that runs out of its expansion budget returns a resumable state;
resuming reads the live map, so obstacles discovered between slices are
honored. Starting a new search on a planner invalidates outstanding states
(the planner owns one set of stamped scratch arrays).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .mapping import VoxelMap

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

_STEP_LEN = (1.0, SQRT2, SQRT3)

# Packed step-count layout: 20 bits per class, straight counts lowest.
_COUNT_BITS = 20
_COUNT_MASK = (1 << _COUNT_BITS) - 1


def _neighbor_table() -> tuple[np.ndarray, np.ndarray]:
    offs = []
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == dy == dz == 0:
                    continue
                offs.append((dx, dy, dz))
    offs = np.array(offs, dtype=np.int64)
    cls = (np.abs(offs).sum(axis=1) - 1).astype(np.int64)
    return offs, cls


_OFFSETS, _STEP_CLASS = _neighbor_table()


def canonical_cost(counts: tuple[int, int, int], resolution: float) -> float:
    """Meters for (straight, planar-diagonal, cubic-diagonal) step counts."""
    c1, c2, c3 = counts
    return resolution * (float(c1) + SQRT2 * float(c2) + SQRT3 * float(c3))


@numba.njit(cache=True, inline="always")
def _grid_distance(dx: int, dy: int, dz: int, resolution: float) -> float:
    a, b, c = dx, dy, dz
    if a < b:
        a, b = b, a
    if b < c:
        b, c = c, b
    if a < b:
        a, b = b, a
    return resolution * (float(a - b) + SQRT2 * float(b - c) + SQRT3 * float(c))


def grid_distance(a_idx: np.ndarray, b_idx: np.ndarray, resolution: float) -> float:
    """Exact obstacle-free 26-connected travel cost between two voxels.

    This is the planner's goal heuristic: it matches the step-cost metric
    exactly in open space, so it stays admissible and consistent while
    collapsing the equal-cost plateaus a straight-line estimate leaves
    behind every obstacle.
    """
    d = np.abs(np.asarray(a_idx, dtype=np.int64) - np.asarray(b_idx, dtype=np.int64))
    return _grid_distance(int(d[0]), int(d[1]), int(d[2]), resolution)


def path_step_counts(voxel_path: np.ndarray) -> tuple[int, int, int]:
    """Step-class histogram of a 26-connected voxel path."""
    counts = [0, 0, 0]
    for a, b in zip(voxel_path[:-1], voxel_path[1:]):
        k = int(abs(int(b[0]) - int(a[0])) + abs(int(b[1]) - int(a[1])) + abs(int(b[2]) - int(a[2])))
        if k not in (1, 2, 3):
            raise ValueError("path is not 26-connected")
        counts[k - 1] += 1
    return counts[0], counts[1], counts[2]


@dataclass(frozen=True)
class HeuristicParams:
    """Weights of the path-consistency bias."""

    w: float = 150.0
    d_follow: float = 5.0


def heuristic_value(
    d_goal: float, d_last_path: float, d_start: float, params: HeuristicParams
) -> float:
    """Node heuristic: goal distance plus, near the start, a stay-on-the-old-path penalty."""
    if d_start <= params.d_follow:
        return d_goal + params.w * d_last_path
    return d_goal


class PlanStatus(enum.Enum):
    PATH = "path"
    BUDGET_EXCEEDED = "budget_exceeded"
    NO_PATH = "no_path"


@dataclass
class SearchState:
    """Resumable search snapshot; valid until the planner starts a new search."""

    search_id: int
    biased: bool
    latched: bool
    start_flat: int
    goal_flat: int
    start_center: np.ndarray
    goal_center: np.ndarray
    prev_path: np.ndarray
    heap_f: np.ndarray
    heap_g: np.ndarray
    heap_id: np.ndarray
    heap_size: int
    expansions_total: int = 0


@dataclass
class PlanOutcome:
    status: PlanStatus
    waypoints: np.ndarray | None = None
    voxel_path: np.ndarray | None = None
    cost: float | None = None
    state: SearchState | None = field(default=None, repr=False)
    expansions: int = 0


@numba.njit(cache=True, inline="always")
def _heap_less(f1, g1, i1, f2, g2, i2):
    if f1 != f2:
        return f1 < f2
    if g1 != g2:
        return g1 > g2  # deeper node first
    return i1 < i2


@numba.njit(cache=True)
def _heap_push(hf, hg, hi, size, f, g, idx):
    cap = hf.shape[0]
    if size >= cap:
        nf = np.empty(cap * 2, dtype=np.float64)
        ng = np.empty(cap * 2, dtype=np.float64)
        ni = np.empty(cap * 2, dtype=np.int64)
        nf[:cap] = hf
        ng[:cap] = hg
        ni[:cap] = hi
        hf, hg, hi = nf, ng, ni
    pos = size
    hf[pos] = f
    hg[pos] = g
    hi[pos] = idx
    while pos > 0:
        parent = (pos - 1) // 2
        if _heap_less(hf[pos], hg[pos], hi[pos], hf[parent], hg[parent], hi[parent]):
            hf[pos], hf[parent] = hf[parent], hf[pos]
            hg[pos], hg[parent] = hg[parent], hg[pos]
            hi[pos], hi[parent] = hi[parent], hi[pos]
            pos = parent
        else:
            break
    return hf, hg, hi, size + 1


@numba.njit(cache=True)
def _heap_pop(hf, hg, hi, size):
    f, g, idx = hf[0], hg[0], hi[0]
    size -= 1
    if size > 0:
        hf[0], hg[0], hi[0] = hf[size], hg[size], hi[size]
        pos = 0
        while True:
            left = 2 * pos + 1
            if left >= size:
                break
            best = left
            right = left + 1
            if right < size and _heap_less(hf[right], hg[right], hi[right], hf[left], hg[left], hi[left]):
                best = right
            if _heap_less(hf[best], hg[best], hi[best], hf[pos], hg[pos], hi[pos]):
                hf[pos], hf[best] = hf[best], hf[pos]
                hg[pos], hg[best] = hg[best], hg[pos]
                hi[pos], hi[best] = hi[best], hi[pos]
                pos = best
            else:
                break
    return f, g, idx, size


@numba.njit(cache=True, inline="always")
def _dist_to_polyline(px, py, pz, pts):
    best = 1e300
    for i in range(pts.shape[0] - 1):
        ax, ay, az = pts[i, 0], pts[i, 1], pts[i, 2]
        bx, by, bz = pts[i + 1, 0], pts[i + 1, 1], pts[i + 1, 2]
        abx, aby, abz = bx - ax, by - ay, bz - az
        denom = abx * abx + aby * aby + abz * abz
        if denom == 0.0:
            s = 0.0
        else:
            s = ((px - ax) * abx + (py - ay) * aby + (pz - az) * abz) / denom
            s = min(1.0, max(0.0, s))
        cx, cy, cz = ax + s * abx, ay + s * aby, az + s * abz
        d = math.sqrt((px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2)
        if d < best:
            best = d
    return best


@numba.njit(cache=True)
def _astar_slice(
    inflated,
    t,
    forget_after,
    origin,
    res,
    g_val,
    g_stamp,
    closed_stamp,
    parent,
    counts,
    sid,
    hf,
    hg,
    hi,
    heap_size,
    start_flat,
    goal_flat,
    start_c,
    prev_pts,
    biased,
    latched,
    w,
    d_follow,
    offsets,
    step_class,
    max_pops,
):
    """Run up to ``max_pops`` expansions. Status: 0 found, 1 exhausted, 2 budget."""
    nx, ny, nz = inflated.shape
    pops = 0
    status = 1
    have_prev = biased and prev_pts.shape[0] >= 2
    near_cut = 0.8 * d_follow
    gz_i = goal_flat % nz
    gy_i = (goal_flat // nz) % ny
    gx_i = goal_flat // (nz * ny)
    while heap_size > 0:
        if pops >= max_pops:
            status = 2
            break
        f0, g0, id0 = hf[0], hg[0], hi[0]
        _, _, _, heap_size = _heap_pop(hf, hg, hi, heap_size)
        if closed_stamp[id0] == sid:
            continue
        if g_stamp[id0] == sid and g0 > g_val[id0]:
            continue  # superseded entry
        closed_stamp[id0] = sid
        pops += 1
        if id0 == goal_flat:
            status = 0
            break
        z0 = id0 % nz
        y0 = (id0 // nz) % ny
        x0 = id0 // (nz * ny)
        cx = origin[0] + (x0 + 0.5) * res
        cy = origin[1] + (y0 + 0.5) * res
        cz = origin[2] + (z0 + 0.5) * res
        if biased and latched == 0:
            ds = math.sqrt((cx - start_c[0]) ** 2 + (cy - start_c[1]) ** 2 + (cz - start_c[2]) ** 2)
            if ds > d_follow:
                latched = 1
        pc = counts[id0]
        c1 = pc & _COUNT_MASK
        c2 = (pc >> _COUNT_BITS) & _COUNT_MASK
        c3 = (pc >> (2 * _COUNT_BITS)) & _COUNT_MASK
        for k in range(offsets.shape[0]):
            x = x0 + offsets[k, 0]
            y = y0 + offsets[k, 1]
            z = z0 + offsets[k, 2]
            if x < 0 or x >= nx or y < 0 or y >= ny or z < 0 or z >= nz:
                continue
            if t - inflated[x, y, z] <= forget_after:
                continue
            ncx = origin[0] + (x + 0.5) * res
            ncy = origin[1] + (y + 0.5) * res
            ncz = origin[2] + (z + 0.5) * res
            dsn = math.sqrt(
                (ncx - start_c[0]) ** 2 + (ncy - start_c[1]) ** 2 + (ncz - start_c[2]) ** 2
            )
            if biased and latched == 1 and dsn < near_cut:
                continue
            n1, n2, n3 = c1, c2, c3
            cls = step_class[k]
            if cls == 0:
                n1 += 1
            elif cls == 1:
                n2 += 1
            else:
                n3 += 1
            ng = res * (float(n1) + SQRT2 * float(n2) + SQRT3 * float(n3))
            nid = (x * ny + y) * nz + z
            if g_stamp[nid] == sid and ng >= g_val[nid]:
                continue
            if closed_stamp[nid] == sid:
                continue  # no reopening; plain mode never needs it
            g_val[nid] = ng
            g_stamp[nid] = sid
            parent[nid] = id0
            counts[nid] = n1 | (n2 << _COUNT_BITS) | (n3 << (2 * _COUNT_BITS))
            h = _grid_distance(abs(x - gx_i), abs(y - gy_i), abs(z - gz_i), res)
            if have_prev and dsn <= d_follow:
                h += w * _dist_to_polyline(ncx, ncy, ncz, prev_pts)
            hf, hg, hi, heap_size = _heap_push(hf, hg, hi, heap_size, ng + h, ng, nid)
    return status, pops, heap_size, latched, hf, hg, hi


class GridPlanner:
    """A* planner bound to one VoxelMap; owns reusable stamped scratch arrays."""

    def __init__(self, vmap: VoxelMap, params: HeuristicParams | None = None):
        self.vmap = vmap
        self.params = params or HeuristicParams()
        n = vmap.voxel_count
        self._g = np.zeros(n, dtype=np.float64)
        self._g_stamp = np.zeros(n, dtype=np.int64)
        self._closed = np.zeros(n, dtype=np.int64)
        self._parent = np.zeros(n, dtype=np.int64)
        self._counts = np.zeros(n, dtype=np.int64)
        self._sid = 0

    # -- public API -----------------------------------------------------------

    def plan(
        self,
        start_world: np.ndarray,
        goal_world: np.ndarray,
        t: float,
        prev_path: np.ndarray | None = None,
        budget: int = 20000,
    ) -> PlanOutcome:
        """Start a fresh search from/to world positions (voxelized internally)."""
        vm = self.vmap
        start = vm.world_to_index(start_world)
        goal = vm.world_to_index(goal_world)
        if not vm.in_bounds(start) or not vm.in_bounds(goal):
            return PlanOutcome(PlanStatus.NO_PATH)
        if vm.inflated_occupied(start, t) or vm.inflated_occupied(goal, t):
            return PlanOutcome(PlanStatus.NO_PATH)
        start_flat = self._flat(start)
        goal_flat = self._flat(goal)
        if start_flat == goal_flat:
            wp = vm.index_to_center(start)[None, :]
            return PlanOutcome(PlanStatus.PATH, wp, start[None, :].copy(), 0.0)
        biased = prev_path is not None and np.asarray(prev_path).shape[0] >= 2
        state = self._fresh_state(start_flat, goal_flat, start, goal, prev_path, biased)
        return self._drive(state, t, budget)

    def resume(self, state: SearchState, t: float, budget: int = 20000) -> PlanOutcome:
        """Continue a budget-exhausted search against the live map."""
        if state.search_id != self._sid:
            raise ValueError("stale search state: a newer search has used this planner")
        return self._drive(state, t, budget)

    # -- internals -------------------------------------------------------------

    def _flat(self, idx: np.ndarray) -> int:
        ny, nz = self.vmap.shape[1], self.vmap.shape[2]
        return (int(idx[0]) * ny + int(idx[1])) * nz + int(idx[2])

    def _unflat(self, flat: int) -> np.ndarray:
        ny, nz = self.vmap.shape[1], self.vmap.shape[2]
        return np.array([flat // (ny * nz), (flat // nz) % ny, flat % nz], dtype=np.int64)

    def _fresh_state(self, start_flat, goal_flat, start, goal, prev_path, biased) -> SearchState:
        self._sid += 1
        vm = self.vmap
        start_c = vm.index_to_center(start)
        goal_c = vm.index_to_center(goal)
        prev = (
            np.ascontiguousarray(prev_path, dtype=np.float64)
            if biased
            else np.empty((0, 3), dtype=np.float64)
        )
        hf = np.empty(4096, dtype=np.float64)
        hg = np.empty(4096, dtype=np.float64)
        hi = np.empty(4096, dtype=np.int64)
        state = SearchState(
            search_id=self._sid,
            biased=biased,
            latched=False,
            start_flat=start_flat,
            goal_flat=goal_flat,
            start_center=start_c,
            goal_center=goal_c,
            prev_path=prev,
            heap_f=hf,
            heap_g=hg,
            heap_id=hi,
            heap_size=0,
        )
        self._g[start_flat] = 0.0
        self._g_stamp[start_flat] = self._sid
        self._parent[start_flat] = -1
        self._counts[start_flat] = 0
        h0 = grid_distance(start, goal, vm.resolution)
        if biased and prev.shape[0] >= 2:
            h0 += self.params.w * float(
                _dist_to_polyline(start_c[0], start_c[1], start_c[2], prev)
            )
        hf, hg, hi, size = _heap_push(hf, hg, hi, 0, h0, 0.0, start_flat)
        state.heap_f, state.heap_g, state.heap_id, state.heap_size = hf, hg, hi, size
        return state

    def _drive(self, state: SearchState, t: float, budget: int) -> PlanOutcome:
        vm = self.vmap
        used = 0
        while True:
            status, pops, heap_size, latched, hf, hg, hi = _astar_slice(
                vm.inflated_last_hit,
                float(t),
                vm.forget_after,
                vm.lower,
                vm.resolution,
                self._g,
                self._g_stamp,
                self._closed,
                self._parent,
                self._counts,
                state.search_id,
                state.heap_f,
                state.heap_g,
                state.heap_id,
                state.heap_size,
                state.start_flat,
                state.goal_flat,
                state.start_center,
                state.prev_path,
                state.biased,
                1 if state.latched else 0,
                self.params.w,
                self.params.d_follow,
                _OFFSETS,
                _STEP_CLASS,
                budget - used,
            )
            used += pops
            state.expansions_total += pops
            state.heap_f, state.heap_g, state.heap_id = hf, hg, hi
            state.heap_size = heap_size
            state.latched = bool(latched)
            if status == 0:
                voxel_path = self._reconstruct(state)
                waypoints = self._prune(voxel_path, t)
                cost = canonical_cost(path_step_counts(voxel_path), vm.resolution)
                return PlanOutcome(
                    PlanStatus.PATH, waypoints, voxel_path, cost, expansions=used
                )
            if status == 2:
                return PlanOutcome(PlanStatus.BUDGET_EXCEEDED, state=state, expansions=used)
            # Open set exhausted. A biased search falls back to a plain one
            # that reuses whatever budget this call has left.
            if not state.biased:
                return PlanOutcome(PlanStatus.NO_PATH, expansions=used)
            start = self._unflat(state.start_flat)
            goal = self._unflat(state.goal_flat)
            state = self._fresh_state(
                state.start_flat, state.goal_flat, start, goal, None, biased=False
            )
            if used >= budget:
                return PlanOutcome(PlanStatus.BUDGET_EXCEEDED, state=state, expansions=used)

    def _reconstruct(self, state: SearchState) -> np.ndarray:
        chain = [state.goal_flat]
        node = state.goal_flat
        while node != state.start_flat:
            node = int(self._parent[node])
            chain.append(node)
        chain.reverse()
        return np.stack([self._unflat(f) for f in chain])

    def _prune(self, voxel_path: np.ndarray, t: float) -> np.ndarray:
        """Greedy shortcutting: keep the farthest waypoint reachable in a straight line."""
        vm = self.vmap
        centers = np.stack([vm.index_to_center(v) for v in voxel_path])
        if centers.shape[0] <= 2:
            return centers
        out = [centers[0]]
        i = 0
        last = centers.shape[0] - 1
        while i < last:
            j = last
            while j > i + 1 and vm.segment_blocked(centers[i], centers[j], t):
                j -= 1
            out.append(centers[j])
            i = j
        return np.stack(out)
