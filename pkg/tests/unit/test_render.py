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

"""Tests for ring and heatmap renderings."""

import numpy as np
import pytest

from forecast_forge.microworld import Bounds, Pose
from forecast_forge.render import (
    render_forecast_map,
    render_heatmap,
    render_ring,
    ring_forecast_ids,
)
from forecast_forge.utils.errors import ArgumentError

POSES = [Pose(1, 1, 0), Pose(1, 1, 3), Pose(2, 1, 0)]


def pgm_pixels(text: str) -> np.ndarray:
    lines = text.splitlines()
    assert lines[0] == "P2"
    width, height = (int(v) for v in lines[2].split())
    assert lines[3] == "255"
    return np.array([[int(v) for v in row.split()] for row in lines[4:]]).reshape(height, width)


def ring_values(ring: str, fill) -> dict[int, np.ndarray]:
    return {fid: np.array([fill(i, fid) for i in range(len(POSES))], dtype=float)
            for fid in ring_forecast_ids(ring)}  # fmt: skip


class TestRingIds:
    @pytest.mark.parametrize(
        "ring,expected",
        [
            ("tm", [1, *range(4, 15)]),
            ("dtam", [16, *range(18, 29)]),
            ("dwm", [35, *range(36, 47)]),
        ],
    )
    def test_ring_forecast_ids(self, ring, expected):
        assert ring_forecast_ids(ring) == expected

    def test_unknown_ring(self):
        with pytest.raises(ArgumentError, match="unknown ring"):
            ring_forecast_ids("xyz")


class TestRenderRing:
    """Clock layout, scaling and the aligned table."""

    def test_all_zero_ring_is_black(self):
        rendered = render_ring(ring_values("tm", lambda i, f: 0.0), POSES, Pose(1, 1, 3))
        pixels = pgm_pixels(rendered.pgm)
        assert pixels.shape == (65, 65)
        assert pixels.max() == 0
        assert rendered.scale == 1.0

    def test_slot_zero_is_at_twelve_o_clock(self):
        """Only the base forecast is nonzero: the brightest square sits above the centre."""
        values = ring_values("dwm", lambda i, f: 4.0 if f == 35 else 0.0)
        rendered = render_ring(values, POSES, Pose(1, 1, 0), "dwm")
        pixels = pgm_pixels(rendered.pgm)
        assert pixels[32 - 24, 32] == 255
        assert pixels[32, 32 + 24] == 0
        assert rendered.scale == 4.0

    def test_slot_three_is_at_three_o_clock(self):
        values = ring_values("tm", lambda i, f: 0.5 if f == 6 else 0.0)
        pixels = pgm_pixels(render_ring(values, POSES, Pose(2, 1, 0)).pgm)
        assert pixels[32, 32 + 24] == 255
        assert pixels[32 - 24, 32] == 0

    def test_table_lists_every_slot(self):
        values = ring_values("tm", lambda i, f: float(i) / 4)
        rendered = render_ring(values, POSES, Pose(2, 1, 0))
        lines = rendered.table.splitlines()
        assert lines[0] == "ring tm at pose 2,1,0"
        assert len(lines) == 2 + 12 + 1
        assert lines[2].split() == ["0", "1", "0.500000"]
        assert lines[-1] == "scale: 0 .. 0.500000"

    def test_unreachable_pose(self):
        with pytest.raises(ArgumentError, match="not in the reachable pose set"):
            render_ring(ring_values("tm", lambda i, f: 0.0), POSES, Pose(9, 9, 0))


class TestRenderHeatmap:
    def test_max_over_headings_and_top_row(self):
        bounds = Bounds(0, 0, 3, 2)
        values = np.array([0.25, 1.0, 0.5])
        rendered = render_heatmap(values, POSES, bounds, forecast_id=1)
        pixels = pgm_pixels(rendered.pgm)
        assert pixels.shape == (3, 4)
        # y=1 is the middle row; (1, 1) keeps the larger of its two headings
        assert pixels[1, 1] == 255
        assert pixels[1, 2] == 128
        assert pixels[0].tolist() == [0, 0, 0, 0]
        assert rendered.table.strip() == "forecast 1 heatmap 4x3, scale: 0 .. 1.000000"

    def test_dispatch_needs_pose_and_bounds(self):
        values = ring_values("tm", lambda i, f: 0.0)
        with pytest.raises(ArgumentError, match="needs a pose"):
            render_forecast_map(values, POSES, kind="ring")
        with pytest.raises(ArgumentError, match="world bounds"):
            render_forecast_map(values, POSES, kind="heatmap")
        with pytest.raises(ArgumentError, match="unknown map kind"):
            render_forecast_map(values, POSES, kind="bars")  # type: ignore[arg-type]

    def test_heatmap_defaults_to_ring_base(self, tmp_path):
        values = ring_values("tm", lambda i, f: 1.0)
        rendered = render_forecast_map(values, POSES, kind="heatmap", bounds=Bounds(0, 0, 3, 2))
        assert rendered.table.startswith("forecast 1 heatmap")
        out = tmp_path / "map.pgm"
        rendered.write(out)
        assert out.read_text(encoding="utf-8") == rendered.pgm
