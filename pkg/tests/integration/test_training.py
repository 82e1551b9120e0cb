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

"""Layer training, gating, verification and persistence on a small room."""

import numpy as np
import pytest

from forecast_forge.curriculum import RTT, TA, TOUCH, build_standard_curriculum
from forecast_forge.microworld import Action, as_finite_mdp
from forecast_forge.runner import (
    Agent,
    BehaviorPolicy,
    Oracle,
    compare_backends,
    narrate,
    run_curriculum,
    train_layer,
    verify_layer,
)
from forecast_forge.state_features import load_params, save_params
from forecast_forge.utils.errors import ConfigurationError, GateError, ParamsError
from forecast_forge.utils.typing import CurriculumConfig, RunConfig


@pytest.fixture(scope="module")
def mdp(small_room):
    return as_finite_mdp(small_room)


@pytest.fixture
def registry():
    return build_standard_curriculum(CurriculumConfig(alpha=1.0))


def make_agent(registry, mdp, small_room, **kwargs):
    return Agent(registry, mdp, start=small_room.start, **kwargs)


class TestBehaviorPolicy:
    def test_primitive_mixture_is_uniform(self, registry):
        """Five one-step primitives mixed with uniform noise stay uniform."""
        primitives = [registry.option(o) for o in range(1, 6)]
        behavior = BehaviorPolicy(primitives, option_prob=0.5)
        rng = np.random.default_rng(0)
        for _ in range(20):
            _, prob = behavior.act(None, rng)
            assert prob == pytest.approx(0.2)
            behavior.after_step(None, rng)
            assert behavior.current is None


class TestTrainLayer:
    """Update counts and gating."""

    def test_touch_updates_only_on_extend_finger(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room)
        stats = train_layer(agent, 1, budget=3000)
        assert stats.steps == 3000
        assert sum(stats.action_counts) == 3000
        assert stats.applied[TOUCH] == stats.action_counts[Action.EF]
        assert stats.applied[TOUCH] + stats.gated[TOUCH] == 3000

    def test_rotation_forecasts_follow_their_actions(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room)
        stats = train_layer(agent, 2, budget=2000, enforce_gate=False)
        assert stats.applied[2] == stats.action_counts[Action.ROTL]
        assert stats.applied[3] == stats.action_counts[Action.ROTR]

    def test_gate_refuses_unverified_prerequisites(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room)
        with pytest.raises(GateError) as info:
            train_layer(agent, 2, budget=10)
        assert info.value.failing == (TOUCH,)

    def test_zero_budget_changes_nothing(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room)
        stats = train_layer(agent, 1, budget=0)
        assert stats.steps == 0
        assert agent.approx.tables[TOUCH] == {}

    def test_touch_converges_and_opens_the_gate(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room, seed=3)
        oracle = Oracle(registry, mdp)
        train_layer(agent, 1, budget=30_000)
        report = verify_layer(agent, oracle, 1)
        assert report.forecasts[0].mean_err <= registry.config.gate
        assert 1 in agent.verified
        stats = train_layer(agent, 2, budget=100)
        assert stats.steps == 100
        assert "Layer 1 introduced forecasts T." in narrate(registry, 1, report)

    def test_linear_backend_trains(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room, backend="linear")
        assert agent.approx.weights.shape == (47, 32 + 1 + 47)
        stats = train_layer(agent, 1, budget=500)
        assert stats.applied[TOUCH] == stats.action_counts[Action.EF]
        assert len(agent.vector_at(agent.start)) == 32 + 1 + 47

    def test_linear_updates_stay_in_their_own_rows(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room, backend="linear")
        train_layer(agent, 1, budget=500)
        others = [i for i, fid in enumerate(agent.approx.forecast_ids) if fid != TOUCH]
        assert not agent.approx.weights[others].any()
        assert not agent.approx.bias[others].any()

    def test_training_is_deterministic(self, registry, mdp, small_room, tmp_path):
        paths = []
        for run in range(2):
            agent = make_agent(registry, mdp, small_room, seed=11)
            train_layer(agent, 1, budget=2000)
            path = tmp_path / f"run{run}.tsv"
            save_params(agent.approx, path, seed=11, world="0" * 64)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestSeedingAndAdoption:
    def test_oracle_seeding_verifies_exactly(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room)
        oracle = Oracle(registry, mdp)
        agent.seed_from(oracle, [1, 2, 3, 4])
        for layer in range(1, 5):
            report = verify_layer(agent, oracle, layer)
            assert all(s.max_err <= 1e-12 for s in report.forecasts)
            assert all(s.match_fraction == 1.0 for s in report.options)
            assert all(s.exact_fraction == 1.0 for s in report.options)
        assert agent.verified == {1, 2, 3, 4}

    def test_linear_agent_cannot_be_seeded(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room, backend="linear")
        with pytest.raises(ConfigurationError):
            agent.seed_from(Oracle(registry, mdp), [1])

    def test_adopt_rejects_other_backend(self, registry, mdp, small_room, tmp_path):
        linear = make_agent(registry, mdp, small_room, backend="linear")
        path = tmp_path / "lin.tsv"
        save_params(linear.approx, path, seed=0, world="0" * 64)
        loaded, _ = load_params(path)
        tabular = make_agent(registry, mdp, small_room)
        with pytest.raises(ParamsError, match="linear backend"):
            tabular.adopt(loaded)


class TestRunCurriculum:
    """End-to-end runs in oracle mode."""

    def test_oracle_run_passes_every_layer(self, small_room_file, tmp_path):
        out = tmp_path / "run"
        result = run_curriculum(RunConfig(world=small_room_file, oracle=True, out=out))
        assert result.passed
        assert result.last_layer == 11
        assert (out / "params_layer11.tsv").exists()
        assert (out / "policies.tsv").exists()
        text = (out / "report.txt").read_text(encoding="utf-8")
        assert text.startswith("FORECAST FORGE REPORT seed=0 world=")
        assert "mode=oracle" in text.splitlines()[0]
        assert text.rstrip().endswith("status: passed through layer 11")
        assert len(result.narratives) == 11

    def test_oracle_mode_needs_tabular(self, small_room_file):
        with pytest.raises(ConfigurationError):
            run_curriculum(RunConfig(world=small_room_file, oracle=True, backend="linear"))

    def test_training_run_halts_on_failed_layer(self, small_room_file, tmp_path):
        """A tiny budget leaves layer 1 unverified and the run stops there."""
        config = CurriculumConfig(budgets={1: 5}, gate=0.001)
        result = run_curriculum(
            RunConfig(world=small_room_file, through_layer=2, out=tmp_path), config
        )
        assert not result.passed
        assert result.last_layer == 1
        assert "exceed mean error" in result.halted
        text = (tmp_path / "report.txt").read_text(encoding="utf-8")
        assert "status: halted at layer 1" in text


class TestRestarts:
    """Jumps to a shuffled cycle of poses during behaviour."""

    def test_restart_count(self, mdp, small_room):
        registry = build_standard_curriculum(CurriculumConfig(alpha=1.0, restart_every=7))
        stats = train_layer(make_agent(registry, mdp, small_room), 1, budget=1000)
        assert stats.restarts == 999 // 7
        assert stats.steps == 1000

    def test_every_pose_is_visited(self, mdp, small_room):
        registry = build_standard_curriculum(CurriculumConfig(alpha=1.0, restart_every=1))
        stats = train_layer(make_agent(registry, mdp, small_room), 1, budget=2 * mdp.state_count)
        assert stats.visited == mdp.state_count

    def test_no_restarts_by_default(self, registry, mdp, small_room):
        stats = train_layer(make_agent(registry, mdp, small_room), 1, budget=500)
        assert stats.restarts == 0
        assert 1 <= stats.visited <= mdp.state_count


class TestSampledTargets:
    def test_same_behaviour_different_estimates(self, mdp, small_room):
        """Sampled stops draw from their own stream, so only the estimates change."""
        runs = {}
        for targets in ("expected", "sampled"):
            config = CurriculumConfig(alpha=1.0, targets=targets, option_learning="dp")
            registry = build_standard_curriculum(config)
            agent = make_agent(registry, mdp, small_room)
            agent.seed_from(Oracle(registry, mdp), [1, 2, 3])
            stats = train_layer(agent, 4, budget=3000, enforce_gate=False)
            runs[targets] = (stats, agent.approx.tables[TA])
        (expected, expected_ta), (sampled, sampled_ta) = runs["expected"], runs["sampled"]
        assert expected.action_counts == sampled.action_counts
        assert expected.applied == sampled.applied
        assert expected_ta != sampled_ta
        assert all(0.0 <= v <= 1.0 for v in sampled_ta.values())


class TestOptionGate:
    def test_weak_option_keeps_the_layer_unverified(self, registry, mdp, small_room):
        agent = make_agent(registry, mdp, small_room)
        oracle = Oracle(registry, mdp)
        agent.seed_from(oracle, [1, 2, 3, 4])
        agent.store_policy(RTT, [Action.RF] * mdp.state_count)
        report = verify_layer(agent, oracle, 4)
        assert all(s.max_err <= 1e-12 for s in report.forecasts)
        assert [s.option_id for s in report.weak_options(0.95)] == [RTT]
        assert report.options[0].exact_fraction == 0.0
        assert 4 not in agent.verified
        assert "(0.0% exactly)" in narrate(registry, 4, report)


class TestLearningCurves:
    def test_curve_is_recorded_and_reported(self, small_room_file, tmp_path):
        config = CurriculumConfig(alpha=1.0, budgets={1: 2000})
        result = run_curriculum(
            RunConfig(world=small_room_file, through_layer=1, out=tmp_path), config
        )
        curve = result.stats[0].curve
        assert [steps for steps, _ in curve] == list(range(0, 2001, 200))
        assert curve[-1][1] <= curve[0][1]
        assert "Mean error fell from" in result.narratives[0]
        text = (tmp_path / "report.txt").read_text(encoding="utf-8")
        assert "learning curves (steps:mean_err):" in text
        assert "curve layer 1: 0:" in text

    def test_curves_can_be_switched_off(self, small_room_file):
        config = CurriculumConfig(alpha=1.0, budgets={1: 500}, curves=False)
        result = run_curriculum(RunConfig(world=small_room_file, through_layer=1), config)
        assert result.stats[0].curve == []


class TestCompareBackends:
    def test_both_backends_report_every_forecast(self, small_room_file):
        config = CurriculumConfig(alpha=1.0, linear_alpha=0.01, budgets={1: 2000})
        comparison = compare_backends(RunConfig(world=small_room_file, through_layer=1), config)
        assert list(comparison.errors) == ["tabular_pose", "linear"]
        assert comparison.names == {TOUCH: "T"}
        lines = comparison.lines()
        assert lines[0] == "id, name, tabular_pose, linear"
        assert lines[1].startswith("1, T, ")
        assert comparison.option_match == {"tabular_pose": {}, "linear": {}}
