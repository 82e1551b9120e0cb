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

"""The DP oracle on a real pose MDP: shift identities, rings and sampling."""

from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from forecast_forge.curriculum import (
    DTA,
    RTT,
    TA,
    TOUCH,
    WLF,
    WRF,
    build_standard_curriculum,
    dtam_id,
    dwm_id,
    tm_id,
)
from forecast_forge.gvf_core import TerminationMode, mc_return
from forecast_forge.microworld import Action, as_finite_mdp, read_world
from forecast_forge.runner import Oracle, audit_annotations
from forecast_forge.utils.seeding import rng_stream
from forecast_forge.utils.typing import CurriculumConfig


@pytest.fixture(scope="module")
def oracle(small_room):
    registry = build_standard_curriculum()
    return Oracle(registry, as_finite_mdp(small_room))


class TestOracle:
    """Exact values of the first layers."""

    def test_touch_is_the_contact_flag(self, oracle):
        values = oracle.table(TOUCH).values
        contact = np.array([p.contact for p in oracle.mdp.annotation], dtype=float)
        assert np.array_equal(values, contact)
        assert contact.any()

    @pytest.mark.parametrize("fid,action", [(2, Action.ROTL), (3, Action.ROTR)])
    def test_rotation_shift_identity(self, oracle, fid, action):
        """TL(s) and TR(s) are T one rotation away."""
        touch = oracle.table(TOUCH).values
        turned = oracle.table(fid).values
        nxt = oracle.mdp.point_next[:, action]
        assert np.array_equal(turned, touch[nxt])

    @pytest.mark.parametrize("ring", [tm_id, dtam_id, dwm_id])
    @pytest.mark.parametrize("slot", [1, 4, 6])
    def test_map_right_side(self, oracle, ring, slot):
        """Slot i equals slot i-1 one rotr away."""
        here = oracle.table(ring(slot)).values
        prev = oracle.table(ring(slot - 1)).values
        nxt = oracle.mdp.point_next[:, Action.ROTR]
        assert np.array_equal(here, prev[nxt])

    @pytest.mark.parametrize("ring", [tm_id, dtam_id, dwm_id])
    @pytest.mark.parametrize("slot", [7, 11])
    def test_map_left_side(self, oracle, ring, slot):
        here = oracle.table(ring(slot)).values
        after = oracle.table(ring(slot + 1)).values
        nxt = oracle.mdp.point_next[:, Action.ROTL]
        assert np.array_equal(here, after[nxt])

    def test_touch_adjacent_is_a_probability(self, oracle):
        values = oracle.table(TA).values
        assert values.min() >= 0.0
        assert values.max() <= 1.0 + 1e-9
        # contact poses touch straight away
        contact = oracle.table(TOUCH).values == 1.0
        assert np.allclose(values[contact], 1.0)

    def test_learned_option_is_greedy_in_its_action_values(self, oracle):
        oracle.solve_layer(4)
        q = oracle.action_values[RTT]
        actions = oracle.actions[RTT]
        chosen = q[np.arange(q.shape[0]), actions]
        assert np.all(chosen >= q.max(axis=1) - 1e-9)
        # the option never rolls
        assert set(np.unique(actions)) <= {Action.ROTL, Action.ROTR, Action.EF}

    def test_distance_to_touch_adjacent_matches_rollouts(self, oracle):
        exact_table = oracle.table(DTA)
        start = oracle.views[0].index
        entry = oracle.registry.forecast(DTA)
        rng = rng_stream(0, DTA, "mc")
        returns = np.array([mc_return(oracle.view_mdp, start, entry.forecast, rng) for _ in range(2000)])
        exact = exact_table.values[start]
        assert returns.min() >= 1.0
        assert abs(returns.mean() - exact) <= 4 * stats.sem(returns) + 1e-9

    def test_every_layer_solves(self, oracle, small_room):
        oracle.solve_through(11)
        assert oracle.solved_layers == set(range(1, 12))
        assert len(oracle.values) == 47
        for table in oracle.values.values():
            assert np.all(np.isfinite(table.values))

    def test_annotation_audit(self, oracle, small_room):
        audit = audit_annotations(oracle.registry, oracle, small_room, "corner")
        assert audit.name == "corner"
        assert audit.marked == 1
        assert len(audit.lines()) == 1 + len(audit.spurious) + len(audit.missed)


CORRIDOR = Path(__file__).resolve().parents[2] / "forecast_forge" / "data" / "worlds" / "corridor.world"


@pytest.mark.slow
class TestCorridorCaps:
    """Wall-following counts are capped by the termination floor."""

    @pytest.mark.parametrize(
        "mode,cap",
        [(TerminationMode.POST_STEP, 10.0), (TerminationMode.PRE_STEP, 9.0)],
    )
    def test_wall_following_cap(self, mode, cap):
        registry = build_standard_curriculum(CurriculumConfig(termination_default=mode))
        oracle = Oracle(registry, as_finite_mdp(read_world(CORRIDOR)))
        for fid in (WRF, WLF):
            table = oracle.table(fid)
            assert table.initiable.any()
            values = table.values[table.initiable]
            assert values.max() <= cap + 1e-9
            assert values.max() > 1.0
