# Copyright 2025 Forecast Forge Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Deterministic 2D robot world: lattice kinematics, camera, touch sensing.

The robot is a disc on the integer lattice with one of 12 headings. Headings
increase clockwise; heading h points along angle -30*h degrees. Walls are
segments, obstacles are circles, and the bounds rectangle is a barrier too.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from forecast_forge.gvf_core import FiniteMdp
from forecast_forge.utils.errors import (
    WorldParseError,
    WorldTooLargeError,
    WorldValidationError,
)
from forecast_forge.utils.seeding import SHARED_STREAM, rng_stream
from forecast_forge.utils.typing import RobotParams

logger = logging.getLogger(__name__)

HEADINGS = 12
WALL_PERIOD = 1.0
FLOOR_PERIOD = 6.0
_EPS = 1e-12


class Action(IntEnum):
    RF = 0
    RB = 1
    ROTL = 2
    ROTR = 3
    EF = 4

    @property
    def option_id(self) -> int:
        return int(self) + 1

    @property
    def label(self) -> str:
        return self.name.lower()


ACTION_COUNT = len(Action)


class Pose(NamedTuple):
    x: int
    y: int
    heading: int

    def __str__(self) -> str:
        return f"{self.x},{self.y},{self.heading}"


class Segment(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float


class Circle(NamedTuple):
    cx: float
    cy: float
    radius: float


class Bounds(NamedTuple):
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def edges(self) -> tuple[Segment, ...]:
        x0, y0, x1, y1 = self
        return (
            Segment(x0, y0, x1, y0),
            Segment(x1, y0, x1, y1),
            Segment(x1, y1, x0, y1),
            Segment(x0, y1, x0, y0),
        )


class Events(NamedTuple):
    contact: bool = False
    blocked: bool = False


@dataclass(frozen=True, eq=False)
class Observation:
    pixels: np.ndarray
    touch: int


@dataclass(frozen=True)
class PoseAnnotation:
    """Per-state payload of the pose MDP."""

    index: int
    pose: Pose
    contact: bool
    pixels: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class PixelPermutation:
    order: tuple[int, ...]
    seed: int

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return np.asarray(raw)[list(self.order)]

    def inverse(self) -> PixelPermutation:
        back = [0] * len(self.order)
        for i, j in enumerate(self.order):
            back[j] = i
        return PixelPermutation(tuple(back), self.seed)


@dataclass(frozen=True)
class WorldSpec:
    bounds: Bounds
    segments: tuple[Segment, ...]
    circles: tuple[Circle, ...]
    start: Pose
    annotations: tuple[tuple[str, tuple[Pose, ...]], ...] = ()

    def annotated(self, name: str) -> frozenset[Pose]:
        for label, poses in self.annotations:
            if label == name:
                return frozenset(poses)
        return frozenset()

    @cached_property
    def barriers(self) -> tuple[Segment, ...]:
        """Explicit walls first, then the bounds edges."""
        return (*self.segments, *self.bounds.edges())

    @cached_property
    def _segment_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([(s.x1, s.y1) for s in self.barriers], dtype=float)
        b = np.array([(s.x2, s.y2) for s in self.barriers], dtype=float)
        return a, b

    @cached_property
    def _circle_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        centers = np.array([(c.cx, c.cy) for c in self.circles], dtype=float).reshape(-1, 2)
        radii = np.array([c.radius for c in self.circles], dtype=float)
        return centers, radii


# ============================================================================
# WORLD FILES
# ============================================================================


def load_world(text_document: str, params: RobotParams | None = None) -> WorldSpec:
    """Parse and validate a world document.

    Lines are `BOUNDS x0 y0 x1 y1`, `SEG x1 y1 x2 y2`, `CIRC cx cy r`,
    `START x y heading` and `ANNOT name x y heading`; '#' starts a comment.
    """
    params = params or RobotParams()
    bounds: tuple[Bounds, int] | None = None
    start: tuple[Pose, int] | None = None
    segments: list[tuple[Segment, int]] = []
    circles: list[tuple[Circle, int]] = []
    annots: dict[str, list[tuple[Pose, int]]] = {}

    for number, raw in enumerate(text_document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, *args = line.split()
        keyword = keyword.upper()
        if keyword == "BOUNDS":
            if bounds is not None:
                raise WorldParseError(number, "BOUNDS given twice")
            bounds = (Bounds(*_ints(args, 4, number, keyword)), number)
        elif keyword == "SEG":
            segments.append((Segment(*map(float, _ints(args, 4, number, keyword))), number))
        elif keyword == "CIRC":
            if len(args) != 3:
                raise WorldParseError(number, "CIRC takes cx cy r")
            cx, cy = _ints(args[:2], 2, number, keyword)
            try:
                radius = float(args[2])
            except ValueError:
                raise WorldParseError(number, f"CIRC radius '{args[2]}' is not a number") from None
            if not (math.isfinite(radius) and radius > 0):
                raise WorldParseError(number, "CIRC radius must be positive")
            circles.append((Circle(float(cx), float(cy), radius), number))
        elif keyword == "START":
            if start is not None:
                raise WorldParseError(number, "START given twice")
            start = (Pose(*_ints(args, 3, number, keyword)), number)
        elif keyword == "ANNOT":
            if len(args) != 4:
                raise WorldParseError(number, "ANNOT takes name x y heading")
            pose = Pose(*_ints(args[1:], 3, number, keyword))
            annots.setdefault(args[0], []).append((pose, number))
        else:
            raise WorldParseError(number, f"unknown keyword '{keyword}'")

    if bounds is None:
        raise WorldParseError(0, "missing BOUNDS")
    if start is None:
        raise WorldParseError(0, "missing START")

    box, box_line = bounds
    offenders: list[str] = []
    if box.x0 >= box.x1 or box.y0 >= box.y1:
        offenders.append(f"line {box_line}: BOUNDS must have x0 < x1 and y0 < y1")
    for seg, n in segments:
        if seg.x1 == seg.x2 and seg.y1 == seg.y2:
            offenders.append(f"line {n}: zero-length segment")
        if not all(_inside(box, x, y) for x, y in ((seg.x1, seg.y1), (seg.x2, seg.y2))):
            offenders.append(f"line {n}: segment outside bounds")
    for circ, n in circles:
        if not (
            box.x0 <= circ.cx - circ.radius
            and circ.cx + circ.radius <= box.x1
            and box.y0 <= circ.cy - circ.radius
            and circ.cy + circ.radius <= box.y1
        ):
            offenders.append(f"line {n}: circle outside bounds")
    if offenders:
        raise WorldValidationError(offenders)

    world = WorldSpec(
        bounds=box,
        segments=tuple(s for s, _ in segments),
        circles=tuple(c for c, _ in circles),
        start=start[0],
        annotations=tuple(
            (name, tuple(p for p, _ in entries)) for name, entries in sorted(annots.items())
        ),
    )
    for label, pose, n in [("START", start[0], start[1])] + [
        ("ANNOT", p, n) for entries in annots.values() for p, n in entries
    ]:
        if not 0 <= pose.heading < HEADINGS:
            offenders.append(f"line {n}: {label} heading {pose.heading} outside 0..11")
        elif not pose_is_free(world, pose, params):
            offenders.append(f"line {n}: {label} pose {pose} collides with a barrier")
    if offenders:
        raise WorldValidationError(offenders)
    return world


def read_world(path: str | Path, params: RobotParams | None = None) -> WorldSpec:
    return load_world(Path(path).read_text(encoding="utf-8"), params)


def _ints(args: Sequence[str], count: int, number: int, keyword: str) -> list[int]:
    if len(args) != count:
        raise WorldParseError(number, f"{keyword} takes {count} integers, got {len(args)}")
    try:
        return [int(a) for a in args]
    except ValueError:
        raise WorldParseError(number, f"{keyword} coordinates must be integers") from None


def _inside(box: Bounds, x: float, y: float) -> bool:
    return box.x0 <= x <= box.x1 and box.y0 <= y <= box.y1


def world_digest(world: WorldSpec) -> str:
    """sha256 over a canonical rendering; formatting and comments do not count."""
    lines = [f"BOUNDS {' '.join(str(v) for v in world.bounds)}"]
    lines += [f"SEG {' '.join(repr(float(v)) for v in s)}" for s in world.segments]
    lines += [f"CIRC {c.cx!r} {c.cy!r} {c.radius!r}" for c in world.circles]
    lines.append(f"START {world.start}")
    for name, poses in world.annotations:
        lines += [f"ANNOT {name} {p}" for p in sorted(poses)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


# ============================================================================
# GEOMETRY
# ============================================================================


def heading_angle(heading: int) -> float:
    return -math.radians(30.0 * heading)


def displacement(heading: int, step_length: int = 2) -> tuple[int, int]:
    angle = heading_angle(heading)
    return (round(step_length * math.cos(angle)), round(step_length * math.sin(angle)))


def _point_segment(px: float, py: float, seg: Segment) -> float:
    ex, ey = seg.x2 - seg.x1, seg.y2 - seg.y1
    length2 = ex * ex + ey * ey
    t = 0.0 if length2 == 0 else ((px - seg.x1) * ex + (py - seg.y1) * ey) / length2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (seg.x1 + t * ex), py - (seg.y1 + t * ey))


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def _segments_cross(p: Segment, q: Segment) -> bool:
    d1 = _cross(q.x2 - q.x1, q.y2 - q.y1, p.x1 - q.x1, p.y1 - q.y1)
    d2 = _cross(q.x2 - q.x1, q.y2 - q.y1, p.x2 - q.x1, p.y2 - q.y1)
    d3 = _cross(p.x2 - p.x1, p.y2 - p.y1, q.x1 - p.x1, q.y1 - p.y1)
    d4 = _cross(p.x2 - p.x1, p.y2 - p.y1, q.x2 - p.x1, q.y2 - p.y1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def segment_distance(p: Segment, q: Segment) -> float:
    if _segments_cross(p, q):
        return 0.0
    return min(
        _point_segment(p.x1, p.y1, q),
        _point_segment(p.x2, p.y2, q),
        _point_segment(q.x1, q.y1, p),
        _point_segment(q.x2, q.y2, p),
    )


def pose_is_free(world: WorldSpec, pose: Pose, params: RobotParams) -> bool:
    r = params.radius
    x, y = pose.x, pose.y
    box = world.bounds
    if not (box.x0 + r <= x <= box.x1 - r and box.y0 + r <= y <= box.y1 - r):
        return False
    if any(_point_segment(x, y, s) < r for s in world.segments):
        return False
    return all(math.hypot(x - c.cx, y - c.cy) >= r + c.radius for c in world.circles)


def sweep_blocked(world: WorldSpec, x0: int, y0: int, x1: int, y1: int, params: RobotParams) -> bool:
    """True when the disc swept from (x0, y0) to (x1, y1) penetrates a barrier."""
    r = params.radius
    box = world.bounds
    if not (box.x0 + r <= x1 <= box.x1 - r and box.y0 + r <= y1 <= box.y1 - r):
        return True
    path = Segment(x0, y0, x1, y1)
    if any(segment_distance(path, s) < r for s in world.segments):
        return True
    return any(_point_segment(c.cx, c.cy, path) < r + c.radius for c in world.circles)


def step(
    world: WorldSpec, pose: Pose, action: Action | int, params: RobotParams | None = None
) -> tuple[Pose, Events]:
    """Apply one primitive action; blocked moves leave the pose unchanged."""
    params = params or RobotParams()
    action = Action(action)
    if action is Action.ROTL:
        return Pose(pose.x, pose.y, (pose.heading - 1) % HEADINGS), Events()
    if action is Action.ROTR:
        return Pose(pose.x, pose.y, (pose.heading + 1) % HEADINGS), Events()
    if action is Action.EF:
        return pose, Events(contact=touch_feasible(world, pose, params))
    dx, dy = displacement(pose.heading, params.step_length)
    if action is Action.RB:
        dx, dy = -dx, -dy
    nx, ny = pose.x + dx, pose.y + dy
    if sweep_blocked(world, pose.x, pose.y, nx, ny, params):
        return pose, Events(blocked=True)
    return Pose(nx, ny, pose.heading), Events()


# ============================================================================
# SENSING
# ============================================================================


def cast_rays(
    world: WorldSpec, origin: tuple[float, float], angles: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest barrier hit per ray.

    Returns:
        (distance, arc coordinate u, unit normal facing the ray), with
        distance inf where a ray hits nothing.
    """
    ox, oy = origin
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    n_rays = d.shape[0]
    best = np.full(n_rays, np.inf)
    arc = np.zeros(n_rays)
    normal = np.zeros((n_rays, 2))

    a, b = world._segment_arrays
    if a.size:
        e = b - a
        rel = a - np.array([ox, oy])
        denom = d[:, :1] * e[:, 1] - d[:, 1:] * e[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rel[:, 0] * e[:, 1] - rel[:, 1] * e[:, 0]) / denom
            s = (rel[:, 0] * d[:, 1:] - rel[:, 1] * d[:, :1]) / denom
        ok = (np.abs(denom) > _EPS) & (t >= 0) & (s >= -_EPS) & (s <= 1 + _EPS)
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(n_rays)
        hit_t = t[rows, idx]
        length = np.hypot(e[idx, 0], e[idx, 1])
        perp = np.stack([-e[idx, 1], e[idx, 0]], axis=1) / length[:, None]
        facing = np.where((perp * d).sum(axis=1, keepdims=True) > 0, -perp, perp)
        found = hit_t < best
        best = np.where(found, hit_t, best)
        arc = np.where(found, np.clip(s[rows, idx], 0.0, 1.0) * length, arc)
        normal = np.where(found[:, None], facing, normal)

    centers, radii = world._circle_arrays
    if radii.size:
        f = np.array([ox, oy]) - centers
        bdot = d @ f.T
        c = (f * f).sum(axis=1) - radii**2
        disc = bdot**2 - c
        t = -bdot - np.sqrt(np.maximum(disc, 0.0))
        t = np.where((disc >= 0) & (t >= 0), t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(n_rays)
        hit_t = t[rows, idx]
        found = hit_t < best
        if np.any(found):
            hx = ox + hit_t * d[:, 0]
            hy = oy + hit_t * d[:, 1]
            cx, cy, rad = centers[idx, 0], centers[idx, 1], radii[idx]
            with np.errstate(invalid="ignore"):
                phi = np.mod(np.arctan2(hy - cy, hx - cx), 2 * np.pi)
                outward = np.stack([(hx - cx) / rad, (hy - cy) / rad], axis=1)
            best = np.where(found, hit_t, best)
            arc = np.where(found, rad * phi, arc)
            normal = np.where(found[:, None], outward, normal)
    return best, arc, normal


def touch_feasible(world: WorldSpec, pose: Pose, params: RobotParams | None = None) -> bool:
    """Nearest barrier ahead is within finger reach and faced within the cone."""
    params = params or RobotParams()
    angle = np.array([heading_angle(pose.heading)])
    dist, _, normal = cast_rays(world, (pose.x, pose.y), angle)
    t = float(dist[0])
    r = params.radius
    if not (r - params.contact_tolerance <= t <= r + params.finger_reach):
        return False
    d = np.array([math.cos(angle[0]), math.sin(angle[0])])
    cos_between = float(np.clip(-(normal[0] @ d), -1.0, 1.0))
    return math.degrees(math.acos(cos_between)) <= params.touch_cone_degrees + 1e-9


def square_wave(u: np.ndarray, period: float) -> np.ndarray:
    return np.where(np.cos(2 * np.pi * np.asarray(u) / period) >= 0, 1.0, -1.0)


def ray_angles(heading: int, params: RobotParams) -> np.ndarray:
    """Sub-sector centres of the field of view, counter-clockwise edge first."""
    width = math.radians(params.fov_degrees)
    i = np.arange(params.camera_rays)
    return heading_angle(heading) + width / 2 - (i + 0.5) * width / params.camera_rays


def raw_pixels(world: WorldSpec, pose: Pose, params: RobotParams | None = None) -> np.ndarray:
    params = params or RobotParams()
    angles = ray_angles(pose.heading, params)
    dist, arc, _ = cast_rays(world, (pose.x, pose.y), angles)
    near = dist <= params.far_distance
    far_x = pose.x + params.far_distance * np.cos(angles)
    far_y = pose.y + params.far_distance * np.sin(angles)
    cx, cy = world.bounds.center
    floor_u = np.hypot(far_x - cx, far_y - cy)
    wall = 0.5 * (1 + square_wave(arc, WALL_PERIOD))
    floor = 0.5 * (1 + square_wave(floor_u, FLOOR_PERIOD))
    return np.where(near, wall, floor)


def sense(
    world: WorldSpec,
    pose: Pose,
    events_prev: Events | None,
    permutation: PixelPermutation | None = None,
    params: RobotParams | None = None,
) -> Observation:
    raw = raw_pixels(world, pose, params)
    pixels = permutation.apply(raw) if permutation is not None else raw
    touch = int(bool(events_prev and events_prev.contact))
    return Observation(pixels=pixels, touch=touch)


def make_pixel_permutation(seed: int, n: int) -> PixelPermutation:
    """Fisher-Yates shuffle over the run's shared permutation stream."""
    rng = rng_stream(seed, SHARED_STREAM, "pixel-permutation")
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return PixelPermutation(tuple(order), seed)


# ============================================================================
# ENVIRONMENT AND ORACLE EXPORT
# ============================================================================


class Microworld:
    """Live environment: owns the pose and the one-step contact latch."""

    def __init__(
        self,
        world: WorldSpec,
        params: RobotParams | None = None,
        permutation: PixelPermutation | None = None,
    ) -> None:
        self.world = world
        self.params = params or RobotParams()
        self.permutation = permutation
        self._pose = world.start
        self._latch = Events()

    @property
    def pose(self) -> Pose:
        return self._pose

    def reset(self, pose: Pose | None = None) -> Observation:
        self._pose = pose if pose is not None else self.world.start
        self._latch = Events()
        return self.observe()

    def act(self, action: Action | int) -> tuple[Observation, Events]:
        self._pose, self._latch = step(self.world, self._pose, action, self.params)
        return self.observe(), self._latch

    def observe(self) -> Observation:
        return sense(self.world, self._pose, self._latch, self.permutation, self.params)


def enumerate_poses(world: WorldSpec, params: RobotParams | None = None) -> list[Pose]:
    """Closure of the start pose under all five actions, sorted by (x, y, heading)."""
    params = params or RobotParams()
    seen = {world.start}
    frontier = deque([world.start])
    while frontier:
        pose = frontier.popleft()
        for action in Action:
            nxt, _ = step(world, pose, action, params)
            if nxt not in seen:
                seen.add(nxt)
                if len(seen) > params.pose_cap:
                    raise WorldTooLargeError(
                        f"world too large for DP: more than {params.pose_cap} poses"
                    )
                frontier.append(nxt)
    logger.debug("enumerated %d poses", len(seen))
    return sorted(seen)


def pose_index(poses: Sequence[Pose]) -> dict[Pose, int]:
    return {pose: i for i, pose in enumerate(poses)}


def as_finite_mdp(world: WorldSpec, params: RobotParams | None = None) -> FiniteMdp:
    """Point-distribution MDP over the enumerated poses.

    Each state's annotation is a PoseAnnotation carrying the pose, whether
    the finger would touch there and the raw (unpermuted) pixels.
    """
    params = params or RobotParams()
    poses = enumerate_poses(world, params)
    index = pose_index(poses)
    n = len(poses)
    successors = np.empty((ACTION_COUNT, n), dtype=np.int64)
    payloads = []
    for i, pose in enumerate(poses):
        for action in Action:
            nxt, _ = step(world, pose, action, params)
            successors[action, i] = index[nxt]
        payloads.append(
            PoseAnnotation(
                index=i,
                pose=pose,
                contact=touch_feasible(world, pose, params),
                pixels=raw_pixels(world, pose, params),
            )
        )
    rows = np.arange(n)
    ones = np.ones(n)
    matrices = tuple(
        sp.csr_matrix((ones, (rows, successors[a])), shape=(n, n)) for a in range(ACTION_COUNT)
    )
    logger.info("pose MDP: %d states", n)
    return FiniteMdp(n, ACTION_COUNT, matrices, payloads)
