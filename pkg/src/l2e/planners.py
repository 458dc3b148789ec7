"""Approximate planners producing fixed-length waypoint plans."""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvConfig, ObstacleSet, Rect, segment_hits_rect


class PlanningError(RuntimeError):
    """Raised when a planner cannot produce a feasible plan."""


@dataclass
class Plan:
    """Waypoint sequence plus the goal it leads to.

    ``waypoints`` is ``(L, 6)`` (ee xyz, box xyz) for pushing and ``(L, 2)``
    for the maze.
    """

    waypoints: np.ndarray
    goal: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.waypoints.ndim != 2 or len(self.waypoints) == 0:
            raise ValueError("waypoints must be a non-empty (L, dim) array")

    def __len__(self):
        return len(self.waypoints)

    @property
    def dim(self) -> int:
        return self.waypoints.shape[1]

    def key(self) -> str:
        """Content hash over waypoints and goal."""
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.waypoints).tobytes())
        h.update(np.ascontiguousarray(self.goal).tobytes())
        return h.hexdigest()

    def box_path(self) -> np.ndarray:
        """Planar positions of the pushed object (or the maze agent)."""
        if self.dim == 6:
            return self.waypoints[:, 3:5]
        return self.waypoints[:, 0:2]


# ---------------------------------------------------------------------------
# resampling helpers


def resample_polyline(points, n, weights=None):
    """``n`` points spaced uniformly by arc length along ``points``.

    ``weights`` selects the columns that define arc length (all by default);
    every column is interpolated linearly.
    """
    points = np.asarray(points, dtype=float)
    cols = points if weights is None else points[:, weights]
    seg = np.linalg.norm(np.diff(cols, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        return np.repeat(points[:1], n, axis=0)
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, points.shape[1]))
    j = 0
    for i, t in enumerate(targets):
        while j < len(seg) - 1 and cum[j + 1] < t:
            j += 1
        frac = 0.0 if seg[j] == 0.0 else (t - cum[j]) / seg[j]
        frac = min(max(frac, 0.0), 1.0)
        out[i] = points[j] + frac * (points[j + 1] - points[j])
    out[0] = points[0]
    out[-1] = points[-1]
    return out


def resample_keep_vertices(points, n):
    """``n`` points on the polyline that include every vertex.

    Interior points are distributed over segments proportionally to length,
    so each chord lies on the original polyline.
    """
    points = np.asarray(points, dtype=float)
    m = len(points)
    if m > n:
        raise PlanningError(f"polyline has {m} vertices, more than {n} waypoints")
    if m == 1:
        return np.repeat(points, n, axis=0)
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    extra = n - m
    if seg.sum() > 0:
        share = extra * seg / seg.sum()
    else:
        share = np.full(len(seg), extra / len(seg))
    counts = np.floor(share).astype(int)
    # largest remainder, ties to the earlier segment
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[: extra - counts.sum()]] += 1
    out = [points[0]]
    for j, k in enumerate(counts):
        a, b = points[j], points[j + 1]
        for i in range(1, k + 1):
            out.append(a + (b - a) * (i / (k + 1)))
        out.append(b)
    return np.array(out)


# ---------------------------------------------------------------------------
# manhattan pushing planner


def _box_legs(box_xy, goal_xy):
    """Axis-aligned box legs: x first, then y. Zero-length legs are dropped."""
    legs = []
    corner = np.array([goal_xy[0], box_xy[1]])
    for a, b in ((np.asarray(box_xy, float), corner), (corner, np.asarray(goal_xy, float))):
        if np.abs(b - a).max() > 1e-12:
            legs.append((a, b))
    return legs


def _leg_clear(a, b, half_box, obstacles: ObstacleSet, margin):
    """True when the box swept along an axis-aligned leg stays clear of obstacles."""
    lo = np.minimum(a, b) - half_box - margin
    hi = np.maximum(a, b) + half_box + margin
    for r in obstacles:
        if (hi[0] >= r.cx - r.hx and lo[0] <= r.cx + r.hx
                and hi[1] >= r.cy - r.hy and lo[1] <= r.cy + r.hy):
            return False
    return True


def _push_keypoints(ee, box_xy, legs, cfg: EnvConfig):
    """Keypoints ``(ee xyz, box xy)`` for lifting, repositioning and pushing along each leg."""
    z_c = cfg.box_z
    z_up = cfg.lift_height
    reach = cfg.half_box + cfg.ee_radius
    ee = np.asarray(ee, dtype=float).copy()
    box = np.asarray(box_xy, dtype=float).copy()
    keys = [np.concatenate([ee, box])]
    for a, b in legs:
        u = (b - a) / np.linalg.norm(b - a)
        pre = a - u * reach
        post = b - u * reach
        for p in ((ee[0], ee[1], z_up), (pre[0], pre[1], z_up), (pre[0], pre[1], z_c)):
            ee = np.array(p)
            keys.append(np.concatenate([ee, box]))
        ee = np.array([post[0], post[1], z_c])
        box = b.copy()
        keys.append(np.concatenate([ee, box]))
    return np.array(keys)


def manhattan_plan(start, goal, config: EnvConfig | None = None, contacts: int = 2,
                   rng=None, obstacles: ObstacleSet | None = None,
                   length: int | None = None, intermediate=None) -> Plan:
    """Crude manhattan-like push plan from the start state to a planar box goal.

    With ``contacts=4`` the box path goes through an intermediate box position
    sampled from the free region (or given explicitly).
    """
    cfg = config or EnvConfig()
    if contacts not in (2, 4):
        raise ValueError("contacts must be 2 or 4")
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    length = length or (50 if contacts == 2 else 100)
    ee0, box0 = start[0:3], start[3:5]
    obstacles = obstacles or ObstacleSet([])
    meta = {"planner": "manhattan", "contacts": contacts,
            "start": start.copy(), "goal": goal.copy()}

    if np.hypot(*(goal - box0)) <= cfg.goal_tolerance:
        first = np.concatenate([ee0, [box0[0], box0[1], cfg.box_z]])
        meta["intermediate"] = box0.copy() if contacts == 4 else None
        return Plan(np.repeat(first[None], length, axis=0), goal, meta)

    if contacts == 2:
        legs = _box_legs(box0, goal)
        meta["intermediate"] = None
    else:
        if intermediate is None:
            intermediate = sample_intermediate(box0, goal, cfg, obstacles, rng)
        mid = np.asarray(intermediate, dtype=float)
        legs = _box_legs(box0, mid) + _box_legs(mid, goal)
        meta["intermediate"] = mid.copy()

    keys = _push_keypoints(ee0, box0, legs, cfg)
    path = resample_polyline(keys, length, weights=[0, 1, 2])
    wp = np.column_stack([path[:, 0:3], path[:, 3:5], np.full(length, cfg.box_z)])
    return Plan(wp, goal, meta)


def sample_intermediate(box_xy, goal_xy, cfg: EnvConfig, obstacles: ObstacleSet, rng,
                        attempts: int = 2000, leg_margin: float = 0.02):
    """Uniform intermediate box position whose four legs avoid the obstacles."""
    if rng is None:
        raise ValueError("four-contact plans need an rng")
    lim = cfg.half_table - cfg.half_box
    clearance = math.sqrt(2.0) * cfg.half_box
    for _ in range(attempts):
        mid = rng.uniform(-lim, lim, size=2)
        if obstacles.contains(mid[0], mid[1], margin=clearance):
            continue
        legs = _box_legs(box_xy, mid) + _box_legs(mid, goal_xy)
        if all(_leg_clear(a, b, cfg.half_box, obstacles, leg_margin) for a, b in legs):
            return mid
    raise PlanningError("no collision-free intermediate box position found")


# ---------------------------------------------------------------------------
# RRT for the maze


def _free_segment(p, q, rects):
    if not (0.0 <= q[0] <= 1.0 and 0.0 <= q[1] <= 1.0):
        return False
    return not any(segment_hits_rect(p[0], p[1], q[0], q[1], r) for r in rects)


def _rrt_once(start, goal, rects, rng, step, goal_bias, max_iter):
    nodes = np.empty((max_iter + 2, 2))
    parent = np.full(max_iter + 2, -1, dtype=int)
    nodes[0] = start
    count = 1
    for _ in range(max_iter):
        target = goal if rng.random() < goal_bias else rng.random(2)
        d = np.sum((nodes[:count] - target) ** 2, axis=1)
        near = int(np.argmin(d))
        vec = target - nodes[near]
        dist = math.sqrt(d[near])
        if dist == 0.0:
            continue
        new = nodes[near] + vec * min(1.0, step / dist)
        if not _free_segment(nodes[near], new, rects):
            continue
        nodes[count] = new
        parent[count] = near
        count += 1
        if np.hypot(*(goal - new)) <= step and _free_segment(new, goal, rects):
            nodes[count] = goal
            parent[count] = count - 1
            path = []
            i = count
            while i >= 0:
                path.append(nodes[i].copy())
                i = parent[i]
            return path[::-1]
    return None


def shortcut(path, rects, rng, passes):
    path = list(path)
    for _ in range(passes):
        if len(path) <= 2:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if _free_segment(path[i], path[j], rects):
            path = path[: i + 1] + path[j:]
    return path


def rrt_plan(start, goal, obstacles: ObstacleSet, rng, length: int = 20,
             step: float = 0.05, goal_bias: float = 0.1, max_iter: int = 5000,
             smooth_passes: int = 50, margin: float = 0.02, retries: int = 5) -> Plan:
    """Collision-free RRT plan in the unit square, shortcut-smoothed, ``length`` waypoints.

    Obstacles are inflated by ``margin`` while planning when start and goal
    allow it. Raises :class:`PlanningError` after ``retries`` failed trees.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    meta = {"planner": "rrt", "start": start.copy(), "goal": goal.copy()}
    if np.array_equal(start, goal):
        return Plan(np.repeat(start[None], length, axis=0), goal, meta)
    rects = list(obstacles)
    if margin > 0 and not (obstacles.contains(*start, margin=margin)
                           or obstacles.contains(*goal, margin=margin)):
        rects = [r.inflate(margin) for r in rects]
    if _free_segment(start, goal, rects):
        path = [start, goal]
    else:
        path = None
        for _ in range(retries):
            path = _rrt_once(start, goal, rects, rng, step, goal_bias, max_iter)
            if path is not None:
                path = shortcut(path, rects, rng, smooth_passes)
                if len(path) <= length:
                    break
                path = None
        if path is None:
            raise PlanningError("RRT failed to connect start and goal")
    wp = resample_keep_vertices(np.array(path), length)
    return Plan(wp, goal, meta)


# ---------------------------------------------------------------------------
# density ablation and serialization


def subsample_indices(length: int, n: int) -> np.ndarray:
    if not 2 <= n <= length:
        raise ValueError(f"need 2 <= n <= {length}, got {n}")
    return np.round(np.linspace(0, length - 1, n)).astype(int)


def subsample_plan(plan: Plan, n: int) -> Plan:
    """Keep ``n`` evenly indexed waypoints (endpoints included)."""
    idx = subsample_indices(len(plan), n)
    meta = dict(plan.meta)
    meta["density"] = n
    return Plan(plan.waypoints[idx].copy(), plan.goal.copy(), meta)


def dump_plan(plan: Plan) -> str:
    """Text form: header ``L dim goal...``, then one waypoint per line."""
    buf = io.StringIO()
    header = [str(len(plan)), str(plan.dim)] + [repr(float(g)) for g in plan.goal]
    buf.write(" ".join(header) + "\n")
    for w in plan.waypoints:
        buf.write(" ".join(repr(float(v)) for v in w) + "\n")
    return buf.getvalue()


def load_plan(text: str) -> Plan:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    n, dim = int(head[0]), int(head[1])
    goal = np.array([float(v) for v in head[2:]])
    wp = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + n]])
    if wp.shape != (n, dim):
        raise ValueError(f"expected {n}x{dim} waypoints, got {wp.shape}")
    return Plan(wp, goal, {})


__all__ = [
    "Plan", "PlanningError", "manhattan_plan", "rrt_plan", "subsample_plan",
    "subsample_indices", "dump_plan", "load_plan", "resample_polyline",
    "resample_keep_vertices", "sample_intermediate", "Rect",
]
