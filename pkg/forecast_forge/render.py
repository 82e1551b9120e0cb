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

"""Clock-ring and heatmap renderings of forecast tables as plain-text graymaps."""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from forecast_forge.curriculum import (
    DTA,
    DTAM_FIRST,
    DW,
    DWM_FIRST,
    TM_FIRST,
    TOUCH,
    ring_id,
)
from forecast_forge.microworld import HEADINGS, Bounds, Pose
from forecast_forge.utils.errors import ArgumentError

logger = logging.getLogger(__name__)

RingName = Literal["tm", "dtam", "dwm"]
MapKind = Literal["ring", "heatmap"]

RINGS: dict[str, tuple[int, int]] = {
    "tm": (TOUCH, TM_FIRST),
    "dtam": (DTA, DTAM_FIRST),
    "dwm": (DW, DWM_FIRST),
}

MAXVAL = 255
RING_SIZE = 65
RING_RADIUS = 24
SLOT_HALF = 4


@dataclass(frozen=True)
class RenderedMap:
    """A P2 graymap plus the aligned text table printed alongside it."""

    pgm: str
    table: str
    scale: float

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.pgm, encoding="utf-8")


def ring_forecast_ids(ring: str) -> list[int]:
    """Forecast ids of slots 0-11; slot 0 is the ring's base forecast."""
    try:
        base, first = RINGS[ring]
    except KeyError:
        raise ArgumentError(f"unknown ring '{ring}', expected one of {sorted(RINGS)}") from None
    return [ring_id(base, first, i) for i in range(HEADINGS)]


def _scale(values: np.ndarray) -> float:
    top = float(values.max()) if values.size else 0.0
    return top if top > 0 else 1.0


def _gray(value: float, scale: float) -> int:
    return int(round(MAXVAL * min(max(value, 0.0), scale) / scale))


def _pgm(pixels: np.ndarray, comment: str) -> str:
    height, width = pixels.shape
    rows = [" ".join(str(int(v)) for v in row) for row in pixels]
    return "\n".join(["P2", f"# {comment}", f"{width} {height}", str(MAXVAL), *rows]) + "\n"


def _locate(poses: Sequence[Pose], pose: Pose) -> int:
    for i, candidate in enumerate(poses):
        if candidate == pose:
            return i
    raise ArgumentError(f"pose {pose} is not in the reachable pose set")


def render_ring(
    values: Mapping[int, np.ndarray], poses: Sequence[Pose], pose: Pose, ring: str = "tm"
) -> RenderedMap:
    """Twelve slots laid out like a clock, slot i at i*30 degrees clockwise from up."""
    index = _locate(poses, pose)
    ids = ring_forecast_ids(ring)
    slots = np.array([float(values[fid][index]) for fid in ids])
    scale = _scale(slots)

    pixels = np.zeros((RING_SIZE, RING_SIZE), dtype=int)
    center = RING_SIZE // 2
    for i, value in enumerate(slots):
        angle = math.radians(30.0 * i)
        cx = center + int(round(RING_RADIUS * math.sin(angle)))
        cy = center - int(round(RING_RADIUS * math.cos(angle)))
        pixels[cy - SLOT_HALF : cy + SLOT_HALF + 1, cx - SLOT_HALF : cx + SLOT_HALF + 1] = _gray(
            value, scale
        )

    header = f"{'slot':>4}  {'id':>3}  {'value':>12}"
    lines = [f"ring {ring} at pose {pose}", header]
    lines.extend(f"{i:>4}  {fid:>3}  {v:>12.6f}" for i, (fid, v) in enumerate(zip(ids, slots, strict=True)))
    lines.append(f"scale: 0 .. {scale:.6f}")
    comment = f"ring {ring} pose {pose} scale {scale!r}"
    return RenderedMap(_pgm(pixels, comment), "\n".join(lines) + "\n", scale)


def render_heatmap(
    values: np.ndarray, poses: Sequence[Pose], bounds: Bounds, forecast_id: int
) -> RenderedMap:
    """Per-(x, y) maximum over headings, top row at the largest y."""
    width = bounds.x1 - bounds.x0 + 1
    height = bounds.y1 - bounds.y0 + 1
    grid = np.zeros((height, width))
    seen = np.zeros((height, width), dtype=bool)
    for pose, value in zip(poses, np.asarray(values, dtype=float), strict=True):
        row, col = bounds.y1 - pose.y, pose.x - bounds.x0
        grid[row, col] = value if not seen[row, col] else max(grid[row, col], value)
        seen[row, col] = True
    scale = _scale(grid[seen])
    pixels = np.vectorize(lambda v: _gray(v, scale))(grid).astype(int) if grid.size else grid
    footer = f"forecast {forecast_id} heatmap {width}x{height}, scale: 0 .. {scale:.6f}"
    comment = f"heatmap forecast {forecast_id} scale {scale!r}"
    return RenderedMap(_pgm(pixels, comment), footer + "\n", scale)


def render_forecast_map(
    values: Mapping[int, np.ndarray],
    poses: Sequence[Pose],
    *,
    kind: MapKind = "ring",
    ring: str = "tm",
    pose: Pose | None = None,
    forecast_id: int | None = None,
    bounds: Bounds | None = None,
) -> RenderedMap:
    """Render a ring at one pose, or a heatmap of one forecast over the footprint.

    Args:
        values: Forecast id -> per-state values aligned with `poses`.
        poses: Reachable poses, in state order.
        kind: "ring" or "heatmap".
        ring: Ring family for kind="ring".
        pose: Pose whose ring is drawn (ring only).
        forecast_id: Forecast drawn by the heatmap (defaults to the ring base).
        bounds: World bounds (heatmap only).

    Raises:
        ArgumentError: Unknown kind or ring, or a pose outside the reachable set.
    """
    if kind == "ring":
        if pose is None:
            raise ArgumentError("a ring rendering needs a pose")
        return render_ring(values, poses, pose, ring)
    if kind == "heatmap":
        if bounds is None:
            raise ArgumentError("a heatmap rendering needs the world bounds")
        fid = forecast_id if forecast_id is not None else ring_forecast_ids(ring)[0]
        if fid not in values:
            raise ArgumentError(f"no values for forecast {fid}")
        return render_heatmap(values[fid], poses, bounds, fid)
    raise ArgumentError(f"unknown map kind '{kind}'")
