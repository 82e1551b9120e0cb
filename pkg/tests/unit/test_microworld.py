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

"""Tests for world parsing, lattice kinematics and sensing."""

import math
from pathlib import Path

import numpy as np
import pytest

from forecast_forge.microworld import (
    Action,
    Events,
    Microworld,
    Pose,
    as_finite_mdp,
    displacement,
    enumerate_poses,
    heading_angle,
    load_world,
    make_pixel_permutation,
    pose_is_free,
    raw_pixels,
    read_world,
    step,
    touch_feasible,
    world_digest,
)
from forecast_forge.utils.errors import WorldParseError, WorldValidationError
from forecast_forge.utils.typing import RobotParams

DEMO_WORLD = Path(__file__).resolve().parents[2] / "forecast_forge" / "data" / "worlds" / "two_rooms.world"

ROOM = """
# ten by ten, walls only on the bounds
BOUNDS 0 0 10 10
START 5 5 0
"""


@pytest.fixture
def room():
    return load_world(ROOM)


class TestLoadWorld:
    """World documents: parsing and validation."""

    def test_parses_room(self, room):
        assert tuple(room.bounds) == (0, 0, 10, 10)
        assert room.start == Pose(5, 5, 0)
        assert room.segments == ()
        assert len(room.barriers) == 4

    def test_annotations(self):
        world = load_world(ROOM + "ANNOT door 5 5 0\nANNOT door 5 5 6\n")
        assert world.annotated("door") == {Pose(5, 5, 0), Pose(5, 5, 6)}
        assert world.annotated("nothing") == frozenset()

    def test_missing_bounds_is_line_zero(self):
        with pytest.raises(WorldParseError) as info:
            load_world("START 1 1 0\n")
        assert info.value.line_number == 0

    def test_unknown_keyword_names_its_line(self):
        with pytest.raises(WorldParseError, match="line 3: unknown keyword 'WALL'"):
            load_world("BOUNDS 0 0 10 10\nSTART 5 5 0\nWALL 1 1 2 2\n")

    def test_non_integer_coordinates(self):
        with pytest.raises(WorldParseError, match="integers"):
            load_world("BOUNDS 0 0 10.5 10\nSTART 5 5 0\n")

    def test_segment_outside_bounds(self):
        with pytest.raises(WorldValidationError, match="line 3: segment outside bounds"):
            load_world("BOUNDS 0 0 10 10\nSTART 5 5 0\nSEG 2 2 12 2\n")

    def test_start_colliding_with_wall(self):
        with pytest.raises(WorldValidationError, match="collides"):
            load_world("BOUNDS 0 0 10 10\nSTART 5 5 0\nSEG 5 0 5 10\n")

    def test_start_heading_out_of_range(self):
        with pytest.raises(WorldValidationError, match="heading 12"):
            load_world("BOUNDS 0 0 10 10\nSTART 5 5 12\n")

    def test_digest_ignores_comments_and_spacing(self, room):
        other = load_world("BOUNDS   0 0 10 10   # box\n\nSTART 5 5 0\n")
        assert world_digest(other) == world_digest(room)

    def test_digest_changes_with_geometry(self, room):
        other = load_world("BOUNDS 0 0 10 10\nSTART 5 5 0\nCIRC 2 2 1\n")
        assert world_digest(other) != world_digest(room)


class TestKinematics:
    """Headings, displacements and blocked moves."""

    @pytest.mark.parametrize(
        "heading,expected",
        [(0, (2, 0)), (1, (2, -1)), (2, (1, -2)), (3, (0, -2)), (6, (-2, 0)), (9, (0, 2))],
    )
    def test_displacement(self, heading, expected):
        assert displacement(heading, 2) == expected

    def test_heading_angle_is_clockwise(self):
        assert heading_angle(3) == pytest.approx(-math.pi / 2)

    @pytest.mark.parametrize(
        "action,expected",
        [
            (Action.RF, Pose(7, 5, 0)),
            (Action.RB, Pose(3, 5, 0)),
            (Action.ROTL, Pose(5, 5, 11)),
            (Action.ROTR, Pose(5, 5, 1)),
            (Action.EF, Pose(5, 5, 0)),
        ],
    )
    def test_step_from_centre(self, room, action, expected):
        pose, events = step(room, Pose(5, 5, 0), action)
        assert pose == expected
        assert not events.blocked

    def test_blocked_move_keeps_pose(self, room):
        pose, events = step(room, Pose(5, 1, 3), Action.RF)
        assert pose == Pose(5, 1, 3)
        assert events == Events(blocked=True)

    def test_pose_is_free_respects_radius(self, room):
        params = RobotParams()
        assert pose_is_free(room, Pose(1, 1, 0), params)
        assert not pose_is_free(room, Pose(0, 5, 0), params)

    def test_enumeration_is_sorted_and_free(self, room):
        poses = enumerate_poses(room)
        assert poses == sorted(poses)
        assert room.start in poses
        assert all(pose_is_free(room, p, RobotParams()) for p in poses)
        assert {p.heading for p in poses} == set(range(12))


class TestTouch:
    """Finger contact: reach band and the facing cone."""

    @pytest.mark.parametrize(
        "pose,expected",
        [
            (Pose(5, 1, 3), True),  # facing the floor edge at distance 1
            (Pose(5, 1, 4), False),  # 30 degrees off the wall normal
            (Pose(5, 5, 0), False),  # wall out of reach
        ],
    )
    def test_touch_feasible(self, room, pose, expected):
        assert touch_feasible(room, pose) is expected

    def test_extend_finger_reports_contact(self, room):
        pose, events = step(room, Pose(5, 1, 3), Action.EF)
        assert pose == Pose(5, 1, 3)
        assert events.contact

    def test_touch_bit_latches_for_one_step(self, room):
        env = Microworld(room)
        env.reset(Pose(5, 1, 3))
        obs, _ = env.act(Action.EF)
        assert obs.touch == 1
        obs, _ = env.act(Action.ROTL)
        assert obs.touch == 0


class TestSensing:
    """Camera pixels and the per-run permutation."""

    def test_pixels_are_binary(self, room):
        pixels = raw_pixels(room, Pose(5, 5, 0))
        assert pixels.shape == (32,)
        assert set(np.unique(pixels)) <= {0.0, 1.0}

    @pytest.mark.parametrize("pose", [Pose(17, 22, 1), Pose(16, 18, 0), Pose(15, 24, 11), Pose(14, 20, 1)])
    def test_mirrored_pose_reverses_the_pixels(self, pose):
        """Across x=20 of an open 40x40 room, heading h mirrors to 6-h."""
        hall = load_world("BOUNDS 0 0 40 40\nSTART 20 20 0\n")
        mirrored = Pose(40 - pose.x, pose.y, (6 - pose.heading) % 12)
        pixels = raw_pixels(hall, pose)
        assert not np.array_equal(pixels, pixels[::-1])
        assert np.array_equal(raw_pixels(hall, mirrored), pixels[::-1])

    def test_contact_looks_different_from_one_step_back(self):
        world = read_world(DEMO_WORLD)
        params = RobotParams()
        compared = 0
        for pose in enumerate_poses(world, params):
            if not touch_feasible(world, pose, params):
                continue
            back, events = step(world, pose, Action.RB, params)
            if events.blocked:
                continue
            compared += 1
            assert not np.array_equal(raw_pixels(world, pose), raw_pixels(world, back)), pose
        assert compared > 100

    def test_permutation_is_seeded_and_invertible(self):
        a = make_pixel_permutation(5, 32)
        b = make_pixel_permutation(5, 32)
        assert a.order == b.order
        assert sorted(a.order) == list(range(32))
        raw = np.arange(32.0)
        assert np.array_equal(a.inverse().apply(a.apply(raw)), raw)

    def test_observation_uses_permutation(self, room):
        perm = make_pixel_permutation(1, 32)
        env = Microworld(room, permutation=perm)
        obs = env.reset()
        assert np.array_equal(obs.pixels, perm.apply(raw_pixels(room, room.start)))


class TestFiniteExport:
    """The pose MDP handed to the DP oracle."""

    def test_mdp_matches_enumeration(self, room):
        mdp = as_finite_mdp(room)
        poses = enumerate_poses(room)
        assert mdp.state_count == len(poses)
        assert mdp.action_count == 5
        assert mdp.point_next is not None
        assert [p.pose for p in mdp.annotation] == poses

    def test_successors_follow_step(self, room):
        mdp = as_finite_mdp(room)
        index = {p.pose: p.index for p in mdp.annotation}
        start = index[Pose(5, 5, 0)]
        assert mdp.next_state(start, Action.RF) == index[Pose(7, 5, 0)]
        assert mdp.next_state(start, Action.ROTR) == index[Pose(5, 5, 1)]

    def test_contact_annotation(self, room):
        mdp = as_finite_mdp(room)
        for payload in mdp.annotation:
            assert payload.contact == touch_feasible(room, payload.pose)
