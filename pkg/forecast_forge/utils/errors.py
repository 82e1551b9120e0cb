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

"""Exceptions raised across forecast_forge.

Everything derives from ForecastForgeError so the CLI can turn any of them
into exit status 1 with the message as the diagnostic.
"""

from collections.abc import Iterable, Sequence


class ForecastForgeError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigurationError(ForecastForgeError, ValueError):
    """A mode, policy, threshold or config key is invalid."""


class ArgumentError(ForecastForgeError, ValueError):
    """An operation was called with arguments outside its contract."""


class DivergentForecastError(ForecastForgeError):
    """The forecast's sum does not converge on a closed zero-termination cycle."""

    def __init__(self, forecast_id: int, cycle: Sequence[int]) -> None:
        self.forecast_id = forecast_id
        self.cycle = tuple(cycle)
        shown = ", ".join(str(s) for s in self.cycle[:20])
        more = "" if len(self.cycle) <= 20 else f" (+{len(self.cycle) - 20} more)"
        super().__init__(
            f"divergent forecast {forecast_id}: beta is 0 on a closed cycle "
            f"with nonzero cumulant, states [{shown}]{more}"
        )


class NotInitiableError(ForecastForgeError):
    """A rollout was requested from a state outside the option's initiation set."""


class RolloutOverrunError(ForecastForgeError):
    """A rollout exceeded its step budget without terminating."""


class DeadStateError(ForecastForgeError):
    """No admissible action exists at a reachable initiable state."""

    def __init__(self, states: Iterable[int]) -> None:
        self.states = tuple(states)
        super().__init__(f"dead state: no admissible action at states {list(self.states)[:20]}")


class WorldParseError(ForecastForgeError):
    """A world file line could not be parsed."""

    def __init__(self, line_number: int, message: str) -> None:
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class WorldValidationError(ForecastForgeError):
    """A parsed world violates a geometric invariant."""

    def __init__(self, offenders: Sequence[str]) -> None:
        self.offenders = list(offenders)
        super().__init__("invalid world:\n  " + "\n  ".join(self.offenders))


class WorldTooLargeError(ForecastForgeError):
    """Pose enumeration exceeded the configured cap."""


class UnknownEntityError(ForecastForgeError, KeyError):
    """A forecast, option or alias id is not registered."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class MissingEstimateError(ForecastForgeError, KeyError):
    """An alias needed an estimate that was not supplied."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing estimate"


class CurriculumBuildError(ForecastForgeError):
    """The registry has dangling references or violates layer order."""

    def __init__(self, offenders: Sequence[str]) -> None:
        self.offenders = list(offenders)
        super().__init__("curriculum build failed:\n  " + "\n  ".join(self.offenders))


class GateError(ForecastForgeError):
    """A layer was asked to train before its prerequisites verified."""

    def __init__(self, layer: int, failing: Sequence[int]) -> None:
        self.layer = layer
        self.failing = tuple(failing)
        super().__init__(
            f"layer {layer} refused: prerequisite forecasts not verified "
            f"within tolerance: {list(self.failing)}"
        )


class ParamsError(ForecastForgeError):
    """A parameter or policy file is malformed."""


class DigestMismatchError(ParamsError):
    """A parameter file was saved against a different world."""
