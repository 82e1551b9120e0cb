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

"""Agent state vectors and the two forecast approximators.

The tabular backend keys values on the true pose; the linear backend reads
the state vector (pixels, touch bit, previous forecast estimates).
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, NamedTuple

import numpy as np

from forecast_forge.gvf_core import ValueKind
from forecast_forge.microworld import Observation, Pose
from forecast_forge.utils.errors import (
    ArgumentError,
    DigestMismatchError,
    ParamsError,
    UnknownEntityError,
)

logger = logging.getLogger(__name__)

PoseKey = tuple[int, int, int]
BackendKind = Literal["tabular_pose", "linear"]

_PARAMS_HEADER = re.compile(
    r"^FORECASTPARAMS v1 seed=(\d+) world=([0-9a-f]+) backend=(tabular_pose|linear)$"
)
_POLICIES_HEADER = re.compile(r"^OPTIONPOLICIES v1 seed=(\d+) world=([0-9a-f]+)$")


class ParamsHeader(NamedTuple):
    seed: int
    world: str
    backend: str


@dataclass(frozen=True, eq=False)
class StateVector:
    values: np.ndarray
    observation_size: int
    forecast_ids: tuple[int, ...]

    def __len__(self) -> int:
        return int(self.values.size)


def build_state_vector(
    obs: Observation, prev_estimates: Mapping[int, float] | Sequence[tuple[int, float]]
) -> StateVector:
    """Pixels, touch bit, then previous estimates in forecast-id order."""
    items = list(prev_estimates.items() if isinstance(prev_estimates, Mapping) else prev_estimates)
    ids = [fid for fid, _ in items]
    if any(a >= b for a, b in zip(ids, ids[1:], strict=False)):
        raise ArgumentError(f"forecast estimates must be ordered by increasing id, got {ids}")
    pixels = np.asarray(obs.pixels, dtype=float)
    values = np.concatenate([pixels, [float(obs.touch)], [v for _, v in items]])
    return StateVector(values, pixels.size + 1, tuple(ids))


def discretize_pose(pose: Pose | Sequence[int]) -> PoseKey:
    x, y, h = pose
    return (int(x), int(y), int(h))


def _clamp(value: float, kind: ValueKind) -> float:
    if kind is ValueKind.PROBABILITY:
        return min(1.0, max(0.0, value))
    if kind is ValueKind.COUNT:
        return max(0.0, value)
    return value


@dataclass
class Approximator:
    """Per-forecast parameter blocks of one backend."""

    kind: BackendKind
    forecast_ids: tuple[int, ...]
    kinds: dict[int, ValueKind] = field(default_factory=dict)
    feature_count: int = 0
    tables: dict[int, dict[PoseKey, float]] = field(default_factory=dict)
    weights: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self._row = {fid: i for i, fid in enumerate(self.forecast_ids)}
        if self.kind == "tabular_pose":
            for fid in self.forecast_ids:
                self.tables.setdefault(fid, {})
        elif self.weights.shape != (len(self.forecast_ids), self.feature_count):
            self.weights = np.zeros((len(self.forecast_ids), self.feature_count))
            self.bias = np.zeros(len(self.forecast_ids))

    def _check(self, forecast_id: int) -> int:
        try:
            return self._row[forecast_id]
        except KeyError:
            raise UnknownEntityError(f"forecast {forecast_id} is not registered") from None

    def _features(self, key_or_vector: Any) -> np.ndarray:
        values = key_or_vector.values if isinstance(key_or_vector, StateVector) else key_or_vector
        vector = np.asarray(values, dtype=float)
        if vector.shape != (self.feature_count,):
            raise ArgumentError(
                f"linear backend expects {self.feature_count} features, got {vector.shape}"
            )
        return vector

    def predict(self, key_or_vector: Any, forecast_id: int) -> float:
        row = self._check(forecast_id)
        if self.kind == "tabular_pose":
            raw = self.tables[forecast_id].get(key_or_vector, 0.0)
        else:
            raw = float(self.weights[row] @ self._features(key_or_vector) + self.bias[row])
        return _clamp(raw, self.kinds.get(forecast_id, ValueKind.RAW))

    def apply_update(
        self, key_or_vector: Any, forecast_id: int, delta: float, alpha: float, weight: float
    ) -> None:
        row = self._check(forecast_id)
        step = alpha * weight * delta
        if step == 0.0:
            return
        if self.kind == "tabular_pose":
            table = self.tables[forecast_id]
            table[key_or_vector] = table.get(key_or_vector, 0.0) + step
        else:
            self.weights[row] += step * self._features(key_or_vector)
            self.bias[row] += step


def make_approximator(
    kind: BackendKind,
    forecast_ids: Iterable[int],
    kinds: Mapping[int, ValueKind] | None = None,
    feature_count: int = 0,
) -> Approximator:
    if kind not in ("tabular_pose", "linear"):
        raise ArgumentError(f"unknown backend '{kind}'")
    ids = tuple(sorted(forecast_ids))
    if kind == "linear" and feature_count <= 0:
        raise ArgumentError("the linear backend needs a positive feature count")
    return Approximator(kind=kind, forecast_ids=ids, kinds=dict(kinds or {}), feature_count=feature_count)


def predict(approx: Approximator, key_or_vector: Any, forecast_id: int) -> float:
    return approx.predict(key_or_vector, forecast_id)


def predict_all(approx: Approximator, key_or_vector: Any) -> dict[int, float]:
    """Every registered forecast at once, keyed by id."""
    if approx.kind == "linear":
        raw = approx.weights @ approx._features(key_or_vector) + approx.bias
        return {
            fid: _clamp(float(raw[i]), approx.kinds.get(fid, ValueKind.RAW))
            for i, fid in enumerate(approx.forecast_ids)
        }
    return {fid: approx.predict(key_or_vector, fid) for fid in approx.forecast_ids}


def apply_update(
    approx: Approximator,
    key_or_vector: Any,
    forecast_id: int,
    delta: float,
    alpha: float,
    weight: float = 1.0,
) -> None:
    approx.apply_update(key_or_vector, forecast_id, delta, alpha, weight)


def seed_tabular(
    approx: Approximator, forecast_id: int, keys: Sequence[PoseKey], values: Sequence[float]
) -> None:
    """Copy exact values into a tabular block (oracle seeding)."""
    if approx.kind != "tabular_pose":
        raise ArgumentError("only the tabular backend can be seeded from DP tables")
    approx._check(forecast_id)
    approx.tables[forecast_id] = {k: float(v) for k, v in zip(keys, values, strict=True)}


# ============================================================================
# PERSISTENCE
# ============================================================================


def _key_text(key: PoseKey) -> str:
    return ",".join(str(v) for v in key)


def _parse_key(text: str, where: str) -> PoseKey:
    parts = text.split(",")
    try:
        x, y, h = (int(p) for p in parts)
    except ValueError:
        raise ParamsError(f"{where}: bad pose key '{text}'") from None
    return (x, y, h)


def save_params(approx: Approximator, path: str | Path, seed: int, world: str) -> None:
    """Write parameters as sorted text records with lossless float reprs."""
    lines = [f"FORECASTPARAMS v1 seed={seed} world={world} backend={approx.kind}"]
    if approx.kind == "tabular_pose":
        for fid in approx.forecast_ids:
            for key in sorted(approx.tables[fid]):
                lines.append(f"{fid}\t{_key_text(key)}\t{approx.tables[fid][key]!r}")
    else:
        for row, fid in enumerate(approx.forecast_ids):
            cells = [repr(float(w)) for w in approx.weights[row]]
            lines.append("\t".join([str(fid), *cells, repr(float(approx.bias[row]))]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_header(lines: list[str], pattern: re.Pattern[str], path: Path) -> re.Match[str]:
    if not lines:
        raise ParamsError(f"{path}: empty file")
    match = pattern.match(lines[0].strip())
    if match is None:
        raise ParamsError(f"{path}: bad header '{lines[0].strip()}'")
    return match


def _check_digest(found: str, expected: str | None, force: bool, path: Path) -> None:
    if expected is None or found == expected:
        return
    if force:
        logger.warning("%s: world digest mismatch ignored (--force)", path)
        return
    raise DigestMismatchError(
        f"{path}: saved for world {found[:12]}, current world is {expected[:12]}"
    )


def load_params(
    path: str | Path,
    *,
    world: str | None = None,
    kinds: Mapping[int, ValueKind] | None = None,
    force: bool = False,
) -> tuple[Approximator, ParamsHeader]:
    """Read a parameter file written by save_params.

    Args:
        path: File to read.
        world: Digest of the current world; a mismatch refuses the load.
        kinds: Value kinds, so clamping matches the run that saved the file.
        force: Load despite a digest mismatch.
    """
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ParamsError(f"cannot read params '{p}': {e}") from e
    match = _read_header(lines, _PARAMS_HEADER, p)
    header = ParamsHeader(int(match.group(1)), match.group(2), match.group(3))
    _check_digest(header.world, world, force, p)

    tables: dict[int, dict[PoseKey, float]] = {}
    rows: dict[int, list[float]] = {}
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        where = f"{p}:{number}"
        try:
            fid = int(cells[0])
            if header.backend == "tabular_pose":
                if len(cells) != 3:
                    raise ParamsError(f"{where}: expected forecast_id, key, value")
                tables.setdefault(fid, {})[_parse_key(cells[1], where)] = float(cells[2])
            else:
                if len(cells) < 2:
                    raise ParamsError(f"{where}: expected forecast_id, weights, bias")
                rows[fid] = [float(c) for c in cells[1:]]
        except ValueError:
            raise ParamsError(f"{where}: malformed record") from None

    if header.backend == "tabular_pose":
        approx = make_approximator("tabular_pose", tables, kinds)
        approx.tables.update(tables)
    else:
        widths = {len(r) for r in rows.values()}
        if len(widths) != 1:
            raise ParamsError(f"{p}: linear records have differing widths")
        width = widths.pop() - 1
        approx = make_approximator("linear", rows, kinds, feature_count=width)
        for i, fid in enumerate(approx.forecast_ids):
            approx.weights[i] = rows[fid][:-1]
            approx.bias[i] = rows[fid][-1]
    return approx, header


def save_policies(
    policies: Mapping[int, Mapping[PoseKey, int]], path: str | Path, seed: int, world: str
) -> None:
    lines = [f"OPTIONPOLICIES v1 seed={seed} world={world}"]
    for option_id in sorted(policies):
        table = policies[option_id]
        lines.extend(f"{option_id}\t{_key_text(k)}\t{table[k]}" for k in sorted(table))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_policies(
    path: str | Path, *, world: str | None = None, force: bool = False
) -> dict[int, dict[PoseKey, int]]:
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ParamsError(f"cannot read policies '{p}': {e}") from e
    match = _read_header(lines, _POLICIES_HEADER, p)
    _check_digest(match.group(2), world, force, p)
    policies: dict[int, dict[PoseKey, int]] = {}
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        where = f"{p}:{number}"
        if len(cells) != 3:
            raise ParamsError(f"{where}: expected option_id, key, action")
        try:
            policies.setdefault(int(cells[0]), {})[_parse_key(cells[1], where)] = int(cells[2])
        except ValueError:
            raise ParamsError(f"{where}: malformed record") from None
    return policies
