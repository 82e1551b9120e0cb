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
import math
import re
from pathlib import Path
from typing import (
    Literal,
)

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
)

from forecast_forge.gvf_core import TerminationMode
from forecast_forge.utils.errors import ConfigurationError

LAYER_COUNT = 11

DEFAULT_THRESHOLDS: dict[str, float] = {
    "rtt.1": 0.5,
    "rftt.1": 0.5,
    "wall.1": 1.5,
    "wall.2": 4.5,
    "wall.3": 0.5,
    "wlr.1": 0.5,
    "wa.1": 0.5,
    "wa.2": 3.0,
    "lrc.1": 1.0,
    "fbc.1": 1.0,
    "r.1": 6.0,
    "mh.3": 4.0,
    "mh.4": 8.0,
    "sr.5": 25.0,
    "lr.6": 40.0,
    "lr.7": 200.0,
    "d.1": 2.0,
    "d.2": 3.0,
    "d.3": 1.5,
}

DEFAULT_BUDGET = 250_000


class RobotParams(BaseModel):
    """Body, camera and finger geometry of the robot, in lattice units."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    radius: float = Field(0.9, gt=0)
    step_length: int = Field(2, gt=0)
    camera_rays: int = Field(32, gt=0)
    fov_degrees: float = 30.0
    far_distance: float = Field(8.0, gt=0)
    touch_cone_degrees: float = Field(10.0, gt=0)
    finger_reach: float = Field(1.0, gt=0)
    contact_tolerance: float = Field(0.25, gt=0)
    pose_cap: int = Field(5_000_000, gt=0)

    @field_validator("fov_degrees")
    @classmethod
    def _fixed_fov(cls, value: float) -> float:
        if value != 30.0:
            raise ValueError("the camera field of view is fixed at 30 degrees")
        return value


class QSchedule(BaseModel):
    """Episode count, epsilon decay and step size for tabular Q-learning.

    With starts="pairs" each episode opens with the next (state, action)
    pair of a shuffled cycle over all initiable states and admissible
    actions; "uniform" draws only the start state.
    """

    model_config = ConfigDict(extra="forbid")

    episodes: int = Field(50_000, ge=0)
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.05, ge=0, le=1)
    step_size: float = Field(0.5, gt=0, le=1)
    max_episode_steps: int = Field(200, gt=0)
    starts: Literal["pairs", "uniform"] = "pairs"

    def epsilon(self, episode: int) -> float:
        if self.episodes <= 1:
            return self.epsilon_end
        frac = min(1.0, episode / (self.episodes - 1))
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


class CurriculumConfig(BaseModel):
    """Thresholds, budgets and learning constants of a curriculum run."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    thresholds: dict[str, float] = Field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    budgets: dict[int, int] = Field(
        default_factory=lambda: dict.fromkeys(range(1, LAYER_COUNT + 1), DEFAULT_BUDGET)
    )
    termination_default: TerminationMode = TerminationMode.POST_STEP
    termination_floor: float = Field(0.1, ge=0, le=1)
    strict_beta: bool = False
    alpha: float = Field(0.1, gt=0)
    linear_alpha: float | None = Field(None, gt=0)
    decay: Literal["none", "visit"] = "none"
    targets: Literal["expected", "sampled"] = "expected"
    gate: float = Field(0.05, ge=0)
    option_match: float = Field(0.95, ge=0, le=1)
    gating: Literal["match_support", "importance_ratio"] = "match_support"
    option_prob: float = Field(0.5, ge=0, le=1)
    restart_every: int = Field(0, ge=0)
    curves: bool = True
    dta_option: Literal["rftt", "rfta"] = "rftt"
    option_learning: Literal["q", "dp"] = "q"
    mask_penalty: float = Field(-1e6, lt=0)
    qlearning: QSchedule = Field(default_factory=QSchedule)
    verify_tol: float = Field(0.05, gt=0)
    dp_tol: float = Field(1e-10, gt=0)
    dp_max_sweeps: int = Field(20_000, gt=0)
    robot: RobotParams = Field(default_factory=RobotParams)

    def theta(self, entity: str, k: int) -> float:
        key = f"{entity}.{k}"
        if key not in self.thresholds:
            raise ConfigurationError(f"missing threshold theta.{key}")
        return self.thresholds[key]

    def budget(self, layer: int) -> int:
        return self.budgets.get(layer, DEFAULT_BUDGET)


class RunConfig(BaseModel):
    """Everything that determines a run; the seed fixes every random choice."""

    model_config = ConfigDict(extra="forbid")

    world: Path
    config: Path | None = None
    seed: int = Field(0, ge=0, lt=2**64)
    backend: Literal["tabular_pose", "linear"] = "tabular_pose"
    out: Path | None = None
    through_layer: int = Field(LAYER_COUNT, ge=1, le=LAYER_COUNT)
    oracle: bool = False


class ForecastScore(BaseModel):
    layer: int
    forecast_id: int
    name: str
    max_err: float
    mean_err: float
    frac_within_tol: float
    samples: int = 0

    def line(self) -> str:
        return (
            f"{self.layer}, {self.forecast_id}, {self.name}, {self.max_err:.6f}, "
            f"{self.mean_err:.6f}, {self.frac_within_tol:.4f}"
        )


class OptionScore(BaseModel):
    """Greedy agreement of a learned option with the DP action values.

    match_fraction counts poses whose chosen action is within tol of the
    best DP action value; exact_fraction counts poses where it picks the
    same action as the DP-learned option.
    """

    layer: int
    option_id: int
    name: str
    match_fraction: float
    exact_fraction: float = 0.0
    states: int

    def line(self) -> str:
        return (
            f"{self.layer}, option {self.option_id}, {self.name}, "
            f"greedy_match={self.match_fraction:.4f}, exact_match={self.exact_fraction:.4f}, "
            f"states={self.states}"
        )


class VerificationReport(BaseModel):
    """Learned estimates and option policies compared with the DP oracle."""

    tol: float
    forecasts: list[ForecastScore] = Field(default_factory=list)
    options: list[OptionScore] = Field(default_factory=list)

    def offenders(self, gate: float) -> list[ForecastScore]:
        return [s for s in self.forecasts if not s.mean_err <= gate]

    def weak_options(self, option_match: float) -> list[OptionScore]:
        return [s for s in self.options if not s.match_fraction >= option_match]

    def passed(self, gate: float, option_match: float = 0.0) -> bool:
        return not self.offenders(gate) and not self.weak_options(option_match)

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        return VerificationReport(
            tol=self.tol,
            forecasts=[*self.forecasts, *other.forecasts],
            options=[*self.options, *other.options],
        )

    def lines(self) -> list[str]:
        out = ["layer, id, name, max_err, mean_err, frac_within_tol"]
        out.extend(s.line() for s in self.forecasts)
        out.extend(s.line() for s in self.options)
        return out


class LayerStats(BaseModel):
    """Counters collected while training one layer."""

    layer: int
    steps: int = 0
    applied: dict[int, int] = Field(default_factory=dict)
    gated: dict[int, int] = Field(default_factory=dict)
    action_counts: list[int] = Field(default_factory=lambda: [0] * 5)
    options_trained: list[int] = Field(default_factory=list)
    restarts: int = 0
    visited: int = 0
    # (steps taken, mean error of the layer's forecasts against DP)
    curve: list[tuple[int, float]] = Field(default_factory=list)

    def curve_line(self) -> str:
        points = ", ".join(f"{steps}:{err:.4f}" for steps, err in self.curve)
        return f"curve layer {self.layer}: {points}"


_BUDGET_KEY = re.compile(r"^budget\.layer(\d+)$")

# config-file key -> CurriculumConfig field
_SCALAR_KEYS = {
    "termination.default": "termination_default",
    "termination.floor": "termination_floor",
    "termination.strict_beta": "strict_beta",
    "learning.alpha": "alpha",
    "learning.linear_alpha": "linear_alpha",
    "learning.decay": "decay",
    "learning.targets": "targets",
    "learning.gate": "gate",
    "learning.option_match": "option_match",
    "learning.gating": "gating",
    "behavior.option_prob": "option_prob",
    "behavior.restart_every": "restart_every",
    "report.curves": "curves",
    "option.dta": "dta_option",
    "option.learning": "option_learning",
    "penalty.mask": "mask_penalty",
    "verify.tol": "verify_tol",
    "dp.tol": "dp_tol",
    "dp.max_sweeps": "dp_max_sweeps",
}

_MODE_ALIASES = {"pre": "pre_step", "post": "post_step", "one": "one_step"}


def parse_config_text(text: str, source: str = "<config>") -> CurriculumConfig:
    """Parse key=value curriculum configuration text.

    Args:
        text: File contents; '#' starts a comment, blank lines are ignored.
        source: Name used in diagnostics.

    Returns:
        A validated CurriculumConfig with defaults for absent keys.
    """
    thresholds = dict(DEFAULT_THRESHOLDS)
    budgets = dict.fromkeys(range(1, LAYER_COUNT + 1), DEFAULT_BUDGET)
    fields: dict[str, object] = {}
    qlearning: dict[str, str] = {}
    robot: dict[str, str] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{number}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split("=", 1))
        where = f"{source}:{number}"
        if key.startswith("theta."):
            name = key[len("theta.") :]
            if name not in DEFAULT_THRESHOLDS:
                raise ConfigurationError(f"{where}: unknown threshold '{key}'")
            thresholds[name] = _as_float(value, where)
        elif match := _BUDGET_KEY.match(key):
            layer = int(match.group(1))
            if not 1 <= layer <= LAYER_COUNT:
                raise ConfigurationError(f"{where}: no layer {layer}")
            budgets[layer] = int(_as_float(value, where))
        elif key.startswith("qlearning."):
            qlearning[key[len("qlearning.") :]] = value
        elif key.startswith("robot."):
            robot[key[len("robot.") :]] = value
        elif key in _SCALAR_KEYS:
            if key == "termination.default":
                value = _MODE_ALIASES.get(value, value)
            fields[_SCALAR_KEYS[key]] = value
        else:
            raise ConfigurationError(f"{where}: unknown key '{key}'")

    try:
        return CurriculumConfig(
            thresholds=thresholds,
            budgets=budgets,
            qlearning=QSchedule(**qlearning),
            robot=RobotParams(**robot),
            **fields,
        )
    except ValidationError as e:
        raise ConfigurationError(f"{source}: {e}") from e


def load_config(path: str | Path | None = None) -> CurriculumConfig:
    """Load a curriculum config file, or the defaults when path is None."""

    if path is None:
        return CurriculumConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config '{p}': {e}") from e
    return parse_config_text(text, source=str(p))


def _as_float(value: str, where: str) -> float:
    try:
        result = float(value)
    except ValueError as e:
        raise ConfigurationError(f"{where}: '{value}' is not a number") from e
    if not math.isfinite(result):
        raise ConfigurationError(f"{where}: '{value}' is not finite")
    return result
