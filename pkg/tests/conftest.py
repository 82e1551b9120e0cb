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

"""Shared fixtures: a small square room keeps the pose MDP to a few hundred states."""

import pytest

from forecast_forge.microworld import load_world

SMALL_ROOM = """\
# six by six room
BOUNDS 0 0 6 6
SEG 0 0 6 0
SEG 6 0 6 6
SEG 6 6 0 6
SEG 0 6 0 0
START 3 3 0
ANNOT corner 1 1 6
"""


@pytest.fixture
def small_room_file(tmp_path):
    path = tmp_path / "small_room.world"
    path.write_text(SMALL_ROOM, encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_room():
    return load_world(SMALL_ROOM)
