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

"""Tests for state vectors, approximators and parameter files."""

import numpy as np
import pytest

from forecast_forge.gvf_core import ValueKind
from forecast_forge.microworld import Observation, Pose
from forecast_forge.state_features import (
    apply_update,
    build_state_vector,
    discretize_pose,
    load_params,
    load_policies,
    make_approximator,
    predict,
    predict_all,
    save_params,
    save_policies,
    seed_tabular,
)
from forecast_forge.utils.errors import (
    ArgumentError,
    DigestMismatchError,
    ParamsError,
    UnknownEntityError,
)

WORLD_A = "a" * 64
WORLD_B = "b" * 64


class TestStateVector:
    """Layout: pixels, touch bit, then previous estimates by id."""

    def test_layout(self):
        obs = Observation(pixels=np.array([1.0, 0.0, 1.0]), touch=1)
        vector = build_state_vector(obs, {1: 0.25, 4: 3.0})
        assert vector.values.tolist() == [1.0, 0.0, 1.0, 1.0, 0.25, 3.0]
        assert vector.observation_size == 4
        assert vector.forecast_ids == (1, 4)
        assert len(vector) == 6

    def test_estimates_must_be_ordered(self):
        obs = Observation(pixels=np.zeros(2), touch=0)
        with pytest.raises(ArgumentError):
            build_state_vector(obs, [(4, 0.0), (1, 0.0)])

    def test_discretize_pose(self):
        assert discretize_pose(Pose(3, 4, 11)) == (3, 4, 11)


class TestApproximator:
    """Predictions, clamping and updates for both backends."""

    def test_tabular_defaults_to_zero(self):
        approx = make_approximator("tabular_pose", [1, 2])
        assert predict(approx, (1, 1, 0), 2) == 0.0

    def test_unknown_forecast(self):
        approx = make_approximator("tabular_pose", [1])
        with pytest.raises(UnknownEntityError):
            predict(approx, (0, 0, 0), 9)

    @pytest.mark.parametrize(
        "kind,raw,expected",
        [
            (ValueKind.PROBABILITY, 1.7, 1.0),
            (ValueKind.PROBABILITY, -0.2, 0.0),
            (ValueKind.COUNT, -3.0, 0.0),
            (ValueKind.COUNT, 12.5, 12.5),
            (ValueKind.RAW, -3.0, -3.0),
        ],
    )
    def test_clamping_by_value_kind(self, kind, raw, expected):
        approx = make_approximator("tabular_pose", [1], {1: kind})
        apply_update(approx, (0, 0, 0), 1, delta=raw, alpha=1.0)
        assert predict(approx, (0, 0, 0), 1) == pytest.approx(expected)

    def test_linear_update_moves_weights_and_bias(self):
        approx = make_approximator("linear", [1, 2], feature_count=3)
        x = np.array([1.0, 0.0, 2.0])
        apply_update(approx, x, 2, delta=1.0, alpha=0.5)
        assert approx.weights[1].tolist() == [0.5, 0.0, 1.0]
        assert approx.bias.tolist() == [0.0, 0.5]
        assert predict(approx, x, 2) == pytest.approx(0.5 * 1 + 1.0 * 2 + 0.5)
        assert predict_all(approx, x) == pytest.approx({1: 0.0, 2: 3.0})

    def test_linear_step_descends_the_squared_error(self):
        """alpha * (|x|^2 + 1) = 0.5 halves the error, so its square drops to a quarter."""
        approx = make_approximator("linear", [1, 2, 3], feature_count=3)
        x = np.ones(3)
        target = 2.0
        before = (target - predict(approx, x, 2)) ** 2
        apply_update(approx, x, 2, delta=target - predict(approx, x, 2), alpha=0.125)
        after = (target - predict(approx, x, 2)) ** 2
        assert after == pytest.approx(0.25 * before)
        assert not approx.weights[[0, 2]].any()
        assert approx.bias[0] == approx.bias[2] == 0.0

    def test_linear_feature_width_is_checked(self):
        approx = make_approximator("linear", [1], feature_count=3)
        with pytest.raises(ArgumentError):
            predict(approx, np.zeros(2), 1)

    def test_linear_needs_features(self):
        with pytest.raises(ArgumentError):
            make_approximator("linear", [1])

    def test_unknown_backend(self):
        with pytest.raises(ArgumentError):
            make_approximator("neural", [1])  # type: ignore[arg-type]

    def test_seed_tabular(self):
        approx = make_approximator("tabular_pose", [1])
        seed_tabular(approx, 1, [(0, 0, 0), (1, 0, 0)], [0.5, 0.75])
        assert predict(approx, (1, 0, 0), 1) == 0.75
        with pytest.raises(ArgumentError):
            seed_tabular(make_approximator("linear", [1], feature_count=2), 1, [], [])


class TestPersistence:
    """Parameter and policy files."""

    def test_tabular_round_trip_is_byte_identical(self, tmp_path):
        approx = make_approximator("tabular_pose", [1, 2])
        apply_update(approx, (2, 3, 4), 1, delta=0.1, alpha=1.0)
        apply_update(approx, (1, 3, 4), 2, delta=1.0 / 3.0, alpha=1.0)
        first = tmp_path / "a.tsv"
        second = tmp_path / "b.tsv"
        save_params(approx, first, seed=7, world=WORLD_A)
        loaded, header = load_params(first, world=WORLD_A)
        save_params(loaded, second, seed=header.seed, world=header.world)
        assert first.read_bytes() == second.read_bytes()
        assert header.backend == "tabular_pose"
        assert loaded.tables[2][(1, 3, 4)] == 1.0 / 3.0

    def test_linear_round_trip(self, tmp_path):
        approx = make_approximator("linear", [3, 5], feature_count=2)
        approx.weights[:] = [[0.1, -2.0], [1e-17, 4.0]]
        approx.bias[:] = [0.3, -0.7]
        path = tmp_path / "lin.tsv"
        save_params(approx, path, seed=1, world=WORLD_A)
        loaded, _ = load_params(path)
        assert loaded.feature_count == 2
        assert np.array_equal(loaded.weights, approx.weights)
        assert np.array_equal(loaded.bias, approx.bias)

    def test_digest_mismatch_refused(self, tmp_path):
        path = tmp_path / "p.tsv"
        save_params(make_approximator("tabular_pose", [1]), path, seed=0, world=WORLD_A)
        with pytest.raises(DigestMismatchError):
            load_params(path, world=WORLD_B)
        loaded, header = load_params(path, world=WORLD_B, force=True)
        assert header.world == WORLD_A

    def test_bad_header(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text("PARAMS v0\n", encoding="utf-8")
        with pytest.raises(ParamsError, match="bad header"):
            load_params(path)

    def test_malformed_record_names_its_line(self, tmp_path):
        path = tmp_path / "p.tsv"
        path.write_text(
            f"FORECASTPARAMS v1 seed=0 world={WORLD_A} backend=tabular_pose\n1\t0,0,0\tabc\n",
            encoding="utf-8",
        )
        with pytest.raises(ParamsError, match=":2: malformed record"):
            load_params(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParamsError, match="cannot read"):
            load_params(tmp_path / "absent.tsv")

    def test_policies_round_trip(self, tmp_path):
        policies = {8: {(1, 2, 3): 4, (0, 0, 0): 2}, 6: {(5, 5, 5): 3}}
        path = tmp_path / "policies.tsv"
        save_policies(policies, path, seed=3, world=WORLD_A)
        assert load_policies(path, world=WORLD_A) == policies
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == f"OPTIONPOLICIES v1 seed=3 world={WORLD_A}"
        assert lines[1] == "6\t5,5,5\t3"
        assert lines[2] == "8\t0,0,0\t2"

    def test_policies_digest_mismatch(self, tmp_path):
        path = tmp_path / "policies.tsv"
        save_policies({}, path, seed=0, world=WORLD_A)
        with pytest.raises(DigestMismatchError):
            load_policies(path, world=WORLD_B)
