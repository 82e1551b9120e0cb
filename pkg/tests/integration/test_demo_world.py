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

"""The shipped two-rooms world with the shipped curriculum settings."""

import numpy as np
import pytest
from scipy import stats

from forecast_forge.cli import DEFAULT_CONFIG, DEMO_WORLD
from forecast_forge.curriculum import (
    DTA,
    DW,
    MCWP,
    RTT,
    TA,
    TOUCH,
    build_standard_curriculum,
    dtam_id,
    dwm_id,
    tm_id,
)
from forecast_forge.gvf_core import mc_return
from forecast_forge.microworld import Action, as_finite_mdp, read_world
from forecast_forge.runner import (
    Agent,
    Oracle,
    audit_annotations,
    run_curriculum,
    train_layer,
    verify_layer,
)
from forecast_forge.utils.seeding import rng_stream
from forecast_forge.utils.typing import RunConfig, load_config

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def config():
    return load_config(DEFAULT_CONFIG)


@pytest.fixture(scope="module")
def world(config):
    return read_world(DEMO_WORLD, config.robot)


@pytest.fixture(scope="module")
def oracle(config, world):
    registry = build_standard_curriculum(config)
    return Oracle(registry, as_finite_mdp(world, config.robot))


def rotated(oracle, turns):
    """State index reached from every pose by `turns` rotr steps."""
    nxt = oracle.mdp.point_next[:, Action.ROTR]
    idx = np.arange(oracle.mdp.state_count)
    for _ in range(turns):
        idx = nxt[idx]
    return idx


class TestDemoOracle:
    """Exact values on every reachable pose of the demo world."""

    def test_doorway_alias_marks_exactly_the_annotated_poses(self, oracle, world):
        audit = audit_annotations(oracle.registry, oracle, world, "doorway")
        assert audit.marked == 2
        assert audit.exact, audit.lines()

    @pytest.mark.parametrize(
        ("ring", "base"), [(tm_id, TOUCH), (dtam_id, DTA), (dwm_id, DW)]
    )
    def test_every_ring_slot_is_the_base_after_rotations(self, oracle, ring, base):
        values = oracle.table(base).values
        for slot in range(1, 12):
            here = oracle.table(ring(slot)).values
            assert np.allclose(here, values[rotated(oracle, slot)], atol=1e-9, rtol=0), slot

    def test_rotate_to_touch_takes_the_fewest_rotations(self, oracle):
        """The DP policy reaches contact in as few rotations as any direction allows."""
        oracle.solve_layer(4)
        contact = oracle.table(TOUCH).values == 1.0
        actions = oracle.actions[RTT]
        nxt = oracle.mdp.point_next
        rotations = np.stack([rotated(oracle, k) for k in range(12)])
        checked = 0
        for s in range(oracle.mdp.state_count):
            right = [k for k in range(12) if contact[rotations[k, s]]]
            if not right or contact[s]:
                continue
            fewest = min(min(right), min(12 - k for k in right))
            state, steps = s, 0
            while not contact[state] and steps <= 12:
                assert actions[state] in (Action.ROTL, Action.ROTR)
                state = int(nxt[state, actions[state]])
                steps += 1
            assert steps == fewest, oracle.mdp.annotation[s].pose
            checked += 1
        assert checked > 1000

    def test_rollouts_agree_with_dp(self, oracle):
        """Sample means sit within three standard errors of DP on 95% of pairs."""
        pick = rng_stream(0, 0, "mc-poses")
        poses = pick.choice(oracle.mdp.state_count, size=20, replace=False)
        agree, pairs = 0, 0
        for fid in (TOUCH, 2, 3, TA, DTA):
            table = oracle.table(fid)
            forecast = oracle.registry.forecast(fid).forecast
            rng = rng_stream(0, fid, "mc")
            for s in poses[table.initiable[poses]]:
                draws = [mc_return(oracle.view_mdp, int(s), forecast, rng) for _ in range(2000)]
                returns = np.array(draws)
                pairs += 1
                agree += abs(returns.mean() - table.values[s]) <= 3 * stats.sem(returns) + 1e-9
        assert pairs == 100
        assert agree >= 0.95 * pairs


class TestDemoOptionLearning:
    """Q-learned options against the DP action values."""

    @pytest.mark.parametrize(("option_id", "layer"), [(RTT, 4), (MCWP, 8)])
    def test_greedy_match(self, oracle, option_id, layer):
        agent = Agent(oracle.registry, oracle.mdp, start=oracle.views[0].pose)
        agent.seed_from(oracle, range(1, layer))
        trained = train_layer(agent, layer, budget=0, enforce_gate=False)
        assert option_id in trained.options_trained
        report = verify_layer(agent, oracle, layer)
        score = next(s for s in report.options if s.option_id == option_id)
        assert score.states == oracle.mdp.state_count
        assert score.match_fraction >= 0.95
        assert score.exact_fraction <= score.match_fraction


class TestDemoTraining:
    def test_layers_one_to_six_converge(self, oracle, tmp_path):
        out = tmp_path / "demo"
        run = RunConfig(world=DEMO_WORLD, config=DEFAULT_CONFIG, through_layer=6, out=out)
        result = run_curriculum(run)
        assert result.passed, result.halted
        assert result.last_layer == 6

        forecasts = result.report.forecasts
        expected = sum(len(oracle.registry.layer(n).forecast_ids) for n in range(1, 7))
        assert len(forecasts) == expected
        assert all(s.mean_err <= 0.05 for s in forecasts)
        pairs = sum(s.samples for s in forecasts)
        within = sum(s.frac_within_tol * s.samples for s in forecasts)
        assert within / pairs >= 0.95
        assert all(s.match_fraction >= 0.95 for s in result.report.options)

        for layer_stats in result.stats:
            assert layer_stats.visited == oracle.mdp.state_count
            assert len(layer_stats.curve) == 11
            assert layer_stats.curve[-1][1] <= layer_stats.curve[0][1]
        text = (out / "report.txt").read_text(encoding="utf-8")
        assert "learning curves (steps:mean_err):" in text
        assert "status: passed through layer 6" in text
