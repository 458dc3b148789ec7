"""Seedable pushing and maze environments.

Pushing state vectors are 7D ``[ee_x, ee_y, ee_z, box_x, box_y, box_z, yaw]``;
the maze state is the 2D agent position. All environments share the sparse
goal reward and are stepped through :meth:`step`, which clamps actions,
applies bounded uniform noise and integrates the (quasi-static) dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EE = slice(0, 3)
BOX = slice(3, 6)
YAW = 6
PUSH_STATE_DIM = 7
# indices of the pushing state that take part in plan distances (yaw excluded)
PUSH_POSITION_INDEX = (0, 1, 2, 3, 4, 5)
MAZE_POSITION_INDEX = (0, 1)


@dataclass
class EnvConfig:
    table_size: float = 3.0
    box_size: float = 0.4
    ee_radius: float = 0.06
    goal_tolerance: float = 0.1
    episode_length: int = 250
    max_speed: float = 0.1
    noise_scale: float = 0.01
    maze_noise: float = 0.01
    noise: bool = True
    # vertical conventions (table surface at z = 0)
    box_z: float = 0.06
    ee_z_max: float = 0.5
    lift_height: float = 0.3
    ee_margin: float = 0.3
    # maze geometry
    maze_obstacles: int = 3
    maze_half_extent: tuple = (0.05, 0.2)
    maze_clearance: float = 0.02
    # obstacle pushing: fixed wall in the middle of the table
    wall_half_extent: tuple = (0.1, 0.6)

    def __post_init__(self):
        for name in ("table_size", "box_size", "ee_radius", "goal_tolerance",
                     "max_speed", "box_z"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be positive")
        if self.goal_tolerance >= self.box_size:
            raise ValueError("goal_tolerance must be smaller than box_size")

    @property
    def half_table(self) -> float:
        return 0.5 * self.table_size

    @property
    def half_box(self) -> float:
        return 0.5 * self.box_size

    @property
    def contact_threshold(self) -> float:
        return 1.5 * self.ee_radius

    @property
    def ee_z0(self) -> float:
        # resting on the table
        return self.ee_radius


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by center and half extents."""

    cx: float
    cy: float
    hx: float
    hy: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return (abs(x - self.cx) <= self.hx + margin
                and abs(y - self.cy) <= self.hy + margin)

    def inflate(self, margin: float) -> "Rect":
        return Rect(self.cx, self.cy, self.hx + margin, self.hy + margin)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.hx, self.hy])


@dataclass
class ObstacleSet:
    rects: list = field(default_factory=list)

    def __len__(self):
        return len(self.rects)

    def __iter__(self):
        return iter(self.rects)

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        return any(r.contains(x, y, margin) for r in self.rects)

    def as_array(self) -> np.ndarray:
        if not self.rects:
            return np.zeros((0, 4))
        return np.stack([r.as_array() for r in self.rects])


def goal_reached(achieved, goal, tolerance: float):
    """1.0 where the planar distance is within ``tolerance`` (inclusive), else 0.0.

    Works elementwise on ``(..., 2)`` arrays.
    """
    achieved = np.asarray(achieved, dtype=float)
    goal = np.asarray(goal, dtype=float)
    dist = np.hypot(achieved[..., 0] - goal[..., 0], achieved[..., 1] - goal[..., 1])
    return (dist <= tolerance).astype(float)


def segment_hits_rect(x0, y0, x1, y1, rect: Rect) -> bool:
    """Liang-Barsky test of the closed segment against the closed rectangle."""
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - (rect.cx - rect.hx)), (dx, (rect.cx + rect.hx) - x0),
                 (-dy, y0 - (rect.cy - rect.hy)), (dy, (rect.cy + rect.hy) - y0)):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return False
            t0 = max(t0, t)
        else:
            if t < t0:
                return False
            t1 = min(t1, t)
    return t0 <= t1


# ---------------------------------------------------------------------------
# quasi-static disc/box contact


def _box_closest(px, py, bx, by, c, s, h):
    """Signed distance from point to a rotated square and the boundary point / outward normal."""
    # box frame
    lx = c * (px - bx) + s * (py - by)
    ly = -s * (px - bx) + c * (py - by)
    if abs(lx) <= h and abs(ly) <= h:
        # inside: push out through the nearest face
        if h - abs(lx) <= h - abs(ly):
            sx = 1.0 if lx >= 0.0 else -1.0
            qx, qy, nx, ny, dist = sx * h, ly, sx, 0.0, -(h - abs(lx))
        else:
            sy = 1.0 if ly >= 0.0 else -1.0
            qx, qy, nx, ny, dist = lx, sy * h, 0.0, sy, -(h - abs(ly))
    else:
        qx = min(max(lx, -h), h)
        qy = min(max(ly, -h), h)
        ex, ey = lx - qx, ly - qy
        dist = math.hypot(ex, ey)
        nx, ny = ex / dist, ey / dist
    # back to world frame
    wqx = bx + c * qx - s * qy
    wqy = by + s * qx + c * qy
    wnx = c * nx - s * ny
    wny = s * nx + c * ny
    return dist, wqx, wqy, wnx, wny


def resolve_penetration(ex, ey, bx, by, yaw, half_box, radius):
    """Move the box out of the disc at ``(ex, ey)``; returns the new box pose.

    The push acts along the contact normal at the closest boundary point. The
    box twist is proportional to (force, torque / r_g^2) for a uniform square
    with gyration radius r_g, scaled so the contact point separates by exactly
    the penetration depth.
    """
    c, s = math.cos(yaw), math.sin(yaw)
    dist, qx, qy, nx, ny = _box_closest(ex, ey, bx, by, c, s, half_box)
    depth = radius - dist
    if depth <= 0.0:
        return bx, by, yaw
    # push direction into the box
    ux, uy = -nx, -ny
    rx, ry = qx - bx, qy - by
    torque = rx * uy - ry * ux
    gyr2 = (2.0 * half_box) ** 2 / 6.0
    lam = depth / (1.0 + torque * torque / gyr2)
    return bx + lam * ux, by + lam * uy, yaw + lam * torque / gyr2


def push_contact(ee_xy, disp_xy, box_xy, yaw, half_box, radius, max_substep=0.01):
    """Quasi-static push of a square box by a disc moving from ``ee_xy`` by ``disp_xy``.

    Returns ``(box_xy', yaw')``. The motion is split into substeps of at most
    ``max_substep`` and penetration is resolved after each one.
    """
    ex, ey = float(ee_xy[0]), float(ee_xy[1])
    dx, dy = float(disp_xy[0]), float(disp_xy[1])
    bx, by, th = float(box_xy[0]), float(box_xy[1]), float(yaw)
    n = max(1, math.ceil(math.hypot(dx, dy) / max_substep))
    for i in range(1, n + 1):
        px, py = ex + dx * i / n, ey + dy * i / n
        for _ in range(2):
            bx, by, th = resolve_penetration(px, py, bx, by, th, half_box, radius)
    return (bx, by), th


def box_corners(bx, by, yaw, h):
    c, s = math.cos(yaw), math.sin(yaw)
    return [(bx + c * ox - s * oy, by + s * ox + c * oy)
            for ox, oy in ((h, h), (-h, h), (-h, -h), (h, -h))]


def box_overlaps_rect(bx, by, yaw, h, rect: Rect) -> bool:
    """Separating-axis test between a rotated square and an axis-aligned rectangle."""
    corners = box_corners(bx, by, yaw, h)
    xs = [p[0] for p in corners]
    ys = [p[1] for p in corners]
    if max(xs) < rect.cx - rect.hx or min(xs) > rect.cx + rect.hx:
        return False
    if max(ys) < rect.cy - rect.hy or min(ys) > rect.cy + rect.hy:
        return False
    c, s = math.cos(yaw), math.sin(yaw)
    rc = [(rect.cx + sx * rect.hx, rect.cy + sy * rect.hy)
          for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1))]
    for ax, ay in ((c, s), (-s, c)):
        center = ax * bx + ay * by
        proj = [ax * px + ay * py for px, py in rc]
        if max(proj) < center - h or min(proj) > center + h:
            return False
    return True


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# environments


class PushingEnv:
    """Box pushing on a table with a spherical end effector.

    With ``obstacle=True`` a fixed wall in the middle of the table blocks the
    box (the end effector can pass over it).
    """

    state_dim = PUSH_STATE_DIM
    action_dim = 3
    goal_dim = 2
    position_index = PUSH_POSITION_INDEX
    achieved_index = (3, 4)

    def __init__(self, config: EnvConfig | None = None, obstacle: bool = False, seed=None):
        self.config = config or EnvConfig()
        self.obstacle = obstacle
        self.name = "obstacle" if obstacle else "push"
        self.plan_length = 100 if obstacle else 50
        self.rng = np.random.default_rng(seed)
        cfg = self.config
        if obstacle:
            hx, hy = cfg.wall_half_extent
            self.obstacles = ObstacleSet([Rect(0.0, 0.0, hx, hy)])
        else:
            self.obstacles = ObstacleSet([])
        self.state = None
        self.goal = None
        self.t = 0

    @property
    def action_bound(self) -> float:
        return self.config.max_speed

    def seed(self, seed):
        self.rng = np.random.default_rng(seed)

    def achieved_goal(self, state):
        return np.asarray(state)[..., 3:5]

    def sparse_reward(self, state, goal) -> float:
        state = np.asarray(state)
        if self.off_table(state):
            return 0.0
        return float(goal_reached(state[3:5], goal, self.config.goal_tolerance))

    def off_table(self, state) -> bool:
        ht = self.config.half_table
        return abs(state[3]) > ht or abs(state[4]) > ht

    def _box_position_ok(self, x, y, margin=0.0) -> bool:
        cfg = self.config
        h = cfg.half_box
        if any(box_overlaps_rect(x, y, 0.0, h + margin, r) for r in self.obstacles):
            return False
        # keep clear of the end effector at the origin
        reach = h + cfg.ee_radius
        return not (abs(x) < reach and abs(y) < reach)

    def sample_box_position(self, rng, margin=0.0):
        cfg = self.config
        lim = cfg.half_table - cfg.half_box
        for _ in range(1000):
            x, y = rng.uniform(-lim, lim, size=2)
            if self._box_position_ok(x, y, margin):
                return np.array([x, y])
        raise RuntimeError("could not sample a free box position")

    def reset(self, seed=None):
        """Sample a start state and goal; returns ``(state, goal, obstacles)``."""
        if seed is not None:
            self.seed(seed)
        cfg = self.config
        rng = self.rng
        box = self.sample_box_position(rng)
        lim = cfg.half_table - cfg.half_box
        for _ in range(1000):
            goal = rng.uniform(-lim, lim, size=2)
            if (not any(box_overlaps_rect(goal[0], goal[1], 0.0, cfg.half_box, r)
                        for r in self.obstacles)
                    and np.hypot(*(goal - box)) > cfg.goal_tolerance):
                break
        else:
            raise RuntimeError("could not sample a free goal")
        self.state = np.array([0.0, 0.0, cfg.ee_z0, box[0], box[1], cfg.box_z, 0.0])
        self.goal = goal
        self.t = 0
        return self.state.copy(), self.goal.copy(), self.obstacles

    def clamp_action(self, action) -> np.ndarray:
        b = self.config.max_speed
        return np.clip(np.asarray(action, dtype=float), -b, b)

    def sample_noise(self, rng=None) -> np.ndarray:
        cfg = self.config
        if not cfg.noise:
            return np.zeros(3)
        rng = self.rng if rng is None else rng
        return rng.uniform(-cfg.noise_scale, cfg.noise_scale, size=3)

    def transition(self, state, action, noise=None) -> np.ndarray:
        """Deterministic dynamics given an explicit noise draw."""
        cfg = self.config
        state = np.asarray(state, dtype=float)
        nxt = state.copy()
        disp = self.clamp_action(action)
        if noise is not None:
            disp = disp + noise
        ee = state[EE]
        lim = cfg.half_table + cfg.ee_margin
        new_ee = np.array([
            min(max(ee[0] + disp[0], -lim), lim),
            min(max(ee[1] + disp[1], -lim), lim),
            min(max(ee[2] + disp[2], cfg.ee_z0), cfg.ee_z_max),
        ])
        if self.off_table(state):
            # absorbing: the box is gone
            nxt[EE] = new_ee
            return nxt
        bx, by, yaw = state[3], state[4], state[YAW]
        band_top = cfg.box_z + cfg.contact_threshold
        overlap_new = _box_closest(new_ee[0], new_ee[1], bx, by, math.cos(yaw),
                                   math.sin(yaw), cfg.half_box)[0] < cfg.ee_radius
        if ee[2] >= band_top and overlap_new and new_ee[2] < band_top:
            # resting on top of the box
            new_ee[2] = band_top
        if abs(new_ee[2] - cfg.box_z) < cfg.contact_threshold:
            (nbx, nby), nyaw = push_contact(ee[:2], new_ee[:2] - ee[:2], (bx, by), yaw,
                                            cfg.half_box, cfg.ee_radius)
            if any(box_overlaps_rect(nbx, nby, nyaw, cfg.half_box, r) for r in self.obstacles):
                # blocked by the wall: planar motion cancelled
                new_ee[:2] = ee[:2]
            else:
                bx, by, yaw = nbx, nby, wrap_angle(nyaw)
        nxt[EE] = new_ee
        nxt[3], nxt[4], nxt[YAW] = bx, by, yaw
        return nxt

    def step(self, action):
        """Advance the internal state; returns ``(state', reward, done)``."""
        if self.state is None:
            raise RuntimeError("call reset() first")
        nxt = self.transition(self.state, action, self.sample_noise())
        self.state = nxt
        self.t += 1
        reward = self.sparse_reward(nxt, self.goal)
        done = reward == 1.0 or self.t >= self.config.episode_length or self.off_table(nxt)
        return nxt.copy(), reward, done

    def set_task(self, state, goal):
        self.state = np.array(state, dtype=float)
        self.goal = np.array(goal, dtype=float)
        self.t = 0


class MazeEnv:
    """Point agent in the unit square with three random rectangles per episode."""

    state_dim = 2
    action_dim = 2
    goal_dim = 2
    position_index = MAZE_POSITION_INDEX
    achieved_index = (0, 1)
    plan_length = 20
    name = "maze"

    def __init__(self, config: EnvConfig | None = None, seed=None):
        self.config = config or EnvConfig()
        self.rng = np.random.default_rng(seed)
        self.obstacles = ObstacleSet([])
        self.state = None
        self.goal = None
        self.t = 0

    @property
    def action_bound(self) -> float:
        return self.config.max_speed

    def seed(self, seed):
        self.rng = np.random.default_rng(seed)

    def achieved_goal(self, state):
        return np.asarray(state)[..., 0:2]

    def sparse_reward(self, state, goal) -> float:
        return float(goal_reached(np.asarray(state)[0:2], goal, self.config.goal_tolerance))

    def sample_obstacles(self, rng) -> ObstacleSet:
        lo, hi = self.config.maze_half_extent
        rects = []
        for _ in range(self.config.maze_obstacles):
            hx, hy = rng.uniform(lo, hi, size=2)
            cx = rng.uniform(hx, 1.0 - hx)
            cy = rng.uniform(hy, 1.0 - hy)
            rects.append(Rect(float(cx), float(cy), float(hx), float(hy)))
        return ObstacleSet(rects)

    def sample_free_point(self, rng, obstacles, attempts=1000):
        m = self.config.maze_clearance
        for _ in range(attempts):
            p = rng.uniform(m, 1.0 - m, size=2)
            if not obstacles.contains(p[0], p[1], margin=m):
                return p
        return None

    def reset(self, seed=None):
        if seed is not None:
            self.seed(seed)
        rng = self.rng
        while True:
            obstacles = self.sample_obstacles(rng)
            start = self.sample_free_point(rng, obstacles)
            if start is None:
                continue
            for _ in range(1000):
                goal = self.sample_free_point(rng, obstacles)
                if goal is None:
                    break
                if np.hypot(*(goal - start)) > self.config.goal_tolerance:
                    break
            else:
                goal = None
            if goal is not None:
                break
        self.obstacles = obstacles
        self.state = start
        self.goal = goal
        self.t = 0
        return self.state.copy(), self.goal.copy(), self.obstacles

    def clamp_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float)
        norm = math.hypot(a[0], a[1])
        b = self.config.max_speed
        if norm > b:
            a = a * (b / norm)
        return a

    def sample_noise(self, rng=None) -> np.ndarray:
        cfg = self.config
        if not cfg.noise:
            return np.zeros(2)
        rng = self.rng if rng is None else rng
        return rng.uniform(-cfg.maze_noise, cfg.maze_noise, size=2)

    def transition(self, state, action, noise=None, obstacles=None) -> np.ndarray:
        obstacles = self.obstacles if obstacles is None else obstacles
        d = self.clamp_action(action)
        if noise is not None:
            d = d + noise
        x0, y0 = float(state[0]), float(state[1])
        x1, y1 = x0 + d[0], y0 + d[1]
        if not (0.0 <= x1 <= 1.0 and 0.0 <= y1 <= 1.0):
            return np.array([x0, y0])
        for r in obstacles:
            if segment_hits_rect(x0, y0, x1, y1, r):
                return np.array([x0, y0])
        return np.array([x1, y1])

    def step(self, action):
        if self.state is None:
            raise RuntimeError("call reset() first")
        nxt = self.transition(self.state, action, self.sample_noise())
        self.state = nxt
        self.t += 1
        reward = self.sparse_reward(nxt, self.goal)
        done = reward == 1.0 or self.t >= self.config.episode_length
        return nxt.copy(), reward, done

    def set_task(self, state, goal, obstacles=None):
        self.state = np.array(state, dtype=float)
        self.goal = np.array(goal, dtype=float)
        if obstacles is not None:
            self.obstacles = obstacles
        self.t = 0


ENV_IDS = ("push", "obstacle", "maze")


def make_env(env_id: str, config: EnvConfig | None = None, seed=None):
    if env_id == "push":
        return PushingEnv(config, obstacle=False, seed=seed)
    if env_id == "obstacle":
        return PushingEnv(config, obstacle=True, seed=seed)
    if env_id == "maze":
        return MazeEnv(config, seed=seed)
    raise ValueError(f"unknown env {env_id!r}; expected one of {ENV_IDS}")
