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

"""
LAYERED CURRICULUM - forecasts 1-47, options 1-18, aliases 1-13

Every entity is introduced in a numbered layer and may only depend on
entities from its own or lower layers. The map rings (TM, DTAM, DWM) are
the one place where forecasts of a layer bootstrap each other; slot 0 and
slot 12 of each ring are the ring's base forecast itself.

All component callables receive a StateView. A view answers value(id),
alias(id) and action(option id) from whatever source built it: exact DP
tables, the tabular backend or a linear-backend snapshot.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

from forecast_forge.gvf_core import (
    ForecastDef,
    Gating,
    OptionDef,
    OptionObjective,
    OutcomeDef,
    TerminationMode,
    ValueKind,
    always,
)
from forecast_forge.microworld import ACTION_COUNT, Action, Pose
from forecast_forge.utils.errors import (
    ConfigurationError,
    CurriculumBuildError,
    MissingEstimateError,
    UnknownEntityError,
)
from forecast_forge.utils.typing import LAYER_COUNT, CurriculumConfig

logger = logging.getLogger(__name__)

FORECAST_COUNT = 47
OPTION_COUNT = 18
ALIAS_COUNT = 13

ONE_HOT: tuple[tuple[float, ...], ...] = tuple(
    tuple(1.0 if a == b else 0.0 for b in range(ACTION_COUNT)) for a in range(ACTION_COUNT)
)
UNIFORM: tuple[float, ...] = tuple(1.0 / ACTION_COUNT for _ in range(ACTION_COUNT))
ROTATE_OR_TOUCH = (False, False, True, True, True)

# Ring slot 0 (and 12) is the base forecast.
TOUCH, DTA, DW = 1, 16, 35
TM_FIRST, DTAM_FIRST, DWM_FIRST = 4, 18, 36
TA, NTA, DR = 15, 17, 47
WRF, WLF, WRB, WLB, WDA, WDB = 29, 30, 31, 32, 33, 34

WLR, WA, LRFS, FBFS, LRC, FBC, ROOM, CR, MH, RA, SR, LR, DOOR = range(1, 14)
RTT, RFTA, RFTT, RFWR, RFWL, RBWR, RBWL, MRW, MCWP, RFW, GMH, GCR, GFR = range(6, 19)


def ring_id(base: int, first: int, i: int) -> int:
    """Forecast id of slot i of a ring whose slot 1 is `first`."""
    return base if i % 12 == 0 else first - 1 + i


def tm_id(i: int) -> int:
    return ring_id(TOUCH, TM_FIRST, i)


def dtam_id(i: int) -> int:
    return ring_id(DTA, DTAM_FIRST, i)


def dwm_id(i: int) -> int:
    return ring_id(DW, DWM_FIRST, i)


# ============================================================================
# VIEWS
# ============================================================================


class EstimateSource(Protocol):
    registry: Registry

    def estimate(self, view: StateView, forecast_id: int) -> float: ...

    def action(self, view: StateView, option_id: int) -> int: ...


class StateView:
    """Payload handed to every curriculum callable; caches each read."""

    __slots__ = ("_aliases", "_source", "_values", "contact", "index", "pose", "vector")

    def __init__(
        self,
        index: int,
        pose: Pose,
        contact: bool,
        source: EstimateSource,
        vector: Any = None,
    ) -> None:
        self.index = index
        self.pose = pose
        self.contact = contact
        self.vector = vector
        self._source = source
        self._values: dict[int, float] = {}
        self._aliases: dict[int, float] = {}

    def value(self, forecast_id: int) -> float:
        cached = self._values.get(forecast_id)
        if cached is None:
            cached = self._values[forecast_id] = self._source.estimate(self, forecast_id)
        return cached

    def alias(self, alias_id: int) -> float:
        cached = self._aliases.get(alias_id)
        if cached is None:
            alias = self._source.registry.alias(alias_id)
            cached = self._aliases[alias_id] = float(alias.expression(self.value, self.alias))
        return cached

    def action(self, option_id: int) -> int:
        return self._source.action(self, option_id)

    def __repr__(self) -> str:
        return f"StateView(index={self.index}, pose={self.pose})"


# ============================================================================
# REGISTRY TYPES
# ============================================================================

Expression = Callable[[Callable[[int], float], Callable[[int], float]], float]


@dataclass(frozen=True)
class AliasDef:
    id: int
    name: str
    abbrev: str
    layer: int
    expression: Expression
    forecast_refs: tuple[int, ...] = ()
    alias_refs: tuple[int, ...] = ()
    boolean: bool = True


@dataclass(frozen=True)
class OptionEntry:
    id: int
    name: str
    abbrev: str
    layer: int
    option: OptionDef
    learned: bool = False
    objective: OptionObjective | None = None
    forecast_refs: tuple[int, ...] = ()
    alias_refs: tuple[int, ...] = ()
    option_refs: tuple[int, ...] = ()

    @property
    def primitive(self) -> bool:
        return self.layer == 0

    @property
    def stochastic(self) -> bool:
        return self.abbrev == "mrw"


@dataclass(frozen=True)
class ForecastEntry:
    forecast: ForecastDef
    layer: int
    option_id: int
    forecast_refs: tuple[int, ...] = ()
    alias_refs: tuple[int, ...] = ()
    gating: Gating = Gating.MATCH_SUPPORT

    @property
    def id(self) -> int:
        return self.forecast.id

    @property
    def name(self) -> str:
        return self.forecast.name


@dataclass(frozen=True)
class LayerSpec:
    number: int
    forecast_ids: tuple[int, ...]
    option_ids: tuple[int, ...]
    alias_ids: tuple[int, ...]
    budget: int


@dataclass
class Registry:
    config: CurriculumConfig
    forecasts: dict[int, ForecastEntry] = field(default_factory=dict)
    options: dict[int, OptionEntry] = field(default_factory=dict)
    aliases: dict[int, AliasDef] = field(default_factory=dict)
    layers: dict[int, LayerSpec] = field(default_factory=dict)

    def forecast(self, forecast_id: int) -> ForecastEntry:
        try:
            return self.forecasts[forecast_id]
        except KeyError:
            raise UnknownEntityError(f"unknown forecast id {forecast_id}") from None

    def option(self, option_id: int) -> OptionEntry:
        try:
            return self.options[option_id]
        except KeyError:
            raise UnknownEntityError(f"unknown option id {option_id}") from None

    def alias(self, alias_id: int) -> AliasDef:
        try:
            return self.aliases[alias_id]
        except KeyError:
            raise UnknownEntityError(f"unknown alias id {alias_id}") from None

    def layer(self, number: int) -> LayerSpec:
        try:
            return self.layers[number]
        except KeyError:
            raise UnknownEntityError(f"unknown layer {number}") from None

    def value_kinds(self) -> dict[int, ValueKind]:
        return {fid: e.forecast.value_kind for fid, e in self.forecasts.items()}

    def learned_options(self, layer: int | None = None) -> list[OptionEntry]:
        return [
            e
            for _, e in sorted(self.options.items())
            if e.learned and (layer is None or e.layer == layer)
        ]

    def solve_order(self, forecast_ids: Iterable[int]) -> list[int]:
        """Forecast ids ordered so every same-set reference comes first."""
        pending = sorted(set(forecast_ids))
        wanted = set(pending)
        done: list[int] = []
        placed: set[int] = set()
        while pending:
            ready = [
                fid
                for fid in pending
                if all(r in placed or r not in wanted for r in self.forecasts[fid].forecast_refs)
            ]
            if not ready:
                raise CurriculumBuildError([f"forecast cycle among {pending}"])
            done.extend(ready)
            placed.update(ready)
            pending = [fid for fid in pending if fid not in placed]
        return done

    def solve_waves(self, forecast_ids: Iterable[int]) -> list[list[int]]:
        """Groups of mutually independent forecasts, in dependency order."""
        wanted = set(forecast_ids)
        placed: set[int] = set()
        waves: list[list[int]] = []
        while len(placed) < len(wanted):
            wave = sorted(
                fid
                for fid in wanted - placed
                if all(r in placed or r not in wanted for r in self.forecasts[fid].forecast_refs)
            )
            if not wave:
                raise CurriculumBuildError([f"forecast cycle among {sorted(wanted - placed)}"])
            waves.append(wave)
            placed.update(wave)
        return waves


# ============================================================================
# ALIAS EVALUATION
# ============================================================================


def evaluate_alias(registry: Registry, alias_id: int, estimates: Mapping[int, float]) -> float:
    """Value of an alias from explicit forecast estimates."""
    root = registry.alias(alias_id)
    cache: dict[int, float] = {}

    def value(forecast_id: int) -> float:
        if forecast_id not in estimates:
            raise MissingEstimateError(
                f"alias {root.id} ({root.abbrev}) needs an estimate of forecast {forecast_id}"
            )
        return float(estimates[forecast_id])

    def alias(aid: int) -> float:
        if aid not in cache:
            cache[aid] = float(registry.alias(aid).expression(value, alias))
        return cache[aid]

    return alias(alias_id)


# ============================================================================
# BUILDING BLOCKS
# ============================================================================


def _flag(condition: bool) -> float:
    return 1.0 if condition else 0.0


def _constant_policy(row: Sequence[float]) -> Callable[[Any], Sequence[float]]:
    return lambda _view: row


def _learned_policy(option_id: int) -> Callable[[StateView], Sequence[float]]:
    return lambda view: ONE_HOT[view.action(option_id)]


def _cumulant(c: float) -> Callable[[Any, int], float]:
    return lambda _view, _action: c


def _terminal(z: float) -> Callable[[Any], float]:
    return lambda _view: z


def _terminal_value(forecast_id: int) -> Callable[[StateView], float]:
    return lambda view: view.value(forecast_id)


def _terminal_alias(alias_id: int) -> Callable[[StateView], float]:
    return lambda view: view.alias(alias_id)


def _beta_alias(alias_id: int, otherwise: float) -> Callable[[StateView], float]:
    return lambda view: 1.0 if view.alias(alias_id) == 1.0 else otherwise


class _Thresholds:
    """Threshold lookups that collect every missing key before failing."""

    def __init__(self, config: CurriculumConfig) -> None:
        self.config = config
        self.missing: list[str] = []

    def __call__(self, entity: str, k: int, owner: str) -> float:
        try:
            return self.config.theta(entity, k)
        except ConfigurationError:
            self.missing.append(f"{owner}: missing threshold theta.{entity}.{k}")
            return float("nan")


def _primitive_options() -> list[OptionEntry]:
    names = {
        Action.RF: "roll forward",
        Action.RB: "roll backward",
        Action.ROTL: "rotate left",
        Action.ROTR: "rotate right",
        Action.EF: "extend finger",
    }
    return [
        OptionEntry(
            id=action.option_id,
            name=names[action],
            abbrev=action.label,
            layer=0,
            option=OptionDef(
                policy=_constant_policy(ONE_HOT[action]),
                initiation=always,
                termination=_terminal(1.0),
                termination_mode=TerminationMode.ONE_STEP,
                name=action.label,
            ),
        )
        for action in Action
    ]


def _ring(
    base: int, first: int, label: str, layer: int, kind: ValueKind, options: Mapping[int, OptionEntry]
) -> list[ForecastEntry]:
    """Slots 1-6 look one rotr ahead at slot i-1; slots 7-11 one rotl ahead at i+1."""
    entries = []
    for i in range(1, 12):
        if i <= 6:
            action, source = Action.ROTR, ring_id(base, first, i - 1)
        else:
            action, source = Action.ROTL, ring_id(base, first, i + 1)
        option = options[action.option_id].option
        entries.append(
            ForecastEntry(
                forecast=ForecastDef(
                    id=ring_id(base, first, i),
                    name=f"{label}({i})",
                    option=option,
                    outcome=OutcomeDef(_cumulant(0.0), _terminal_value(source)),
                    value_kind=kind,
                ),
                layer=layer,
                option_id=action.option_id,
                forecast_refs=(source,),
            )
        )
    return entries


# ============================================================================
# THE STANDARD CURRICULUM
# ============================================================================


def _standard_entities(
    config: CurriculumConfig,
) -> tuple[list[ForecastEntry], list[OptionEntry], list[AliasDef], list[str]]:
    theta = _Thresholds(config)
    mode = TerminationMode(config.termination_default)
    floor = config.termination_floor
    options: dict[int, OptionEntry] = {o.id: o for o in _primitive_options()}
    forecasts: list[ForecastEntry] = []
    aliases: list[AliasDef] = []
    prim = {a: options[a.option_id].option for a in Action}

    def add_forecast(
        fid: int,
        name: str,
        layer: int,
        option_id: int,
        outcome: OutcomeDef,
        kind: ValueKind,
        refs: tuple[int, ...] = (),
        alias_refs: tuple[int, ...] = (),
    ) -> None:
        entry = options.get(option_id)
        option = entry.option if entry is not None else prim[Action.EF]
        stochastic = entry is not None and entry.stochastic
        gating = Gating.IMPORTANCE_RATIO if stochastic else Gating(config.gating)
        forecasts.append(
            ForecastEntry(
                forecast=ForecastDef(fid, name, option, outcome, kind),
                layer=layer,
                option_id=option_id,
                forecast_refs=refs,
                alias_refs=alias_refs,
                gating=gating,
            )
        )

    def add_option(entry: OptionEntry) -> None:
        options[entry.id] = entry

    def rolling(
        oid: int,
        name: str,
        abbrev: str,
        layer: int,
        action: Action,
        termination: Callable[[StateView], float],
        initiation: Callable[[StateView], bool] = always,
        refs: tuple[int, ...] = (),
        alias_refs: tuple[int, ...] = (),
    ) -> None:
        add_option(
            OptionEntry(
                id=oid,
                name=name,
                abbrev=abbrev,
                layer=layer,
                option=OptionDef(_constant_policy(ONE_HOT[action]), initiation, termination, mode, abbrev),
                forecast_refs=refs,
                alias_refs=alias_refs,
            )
        )

    def learned(
        oid: int,
        name: str,
        abbrev: str,
        layer: int,
        outcome: OutcomeDef,
        termination: Callable[[StateView], float],
        mask: Sequence[bool] | None = None,
        refs: tuple[int, ...] = (),
        alias_refs: tuple[int, ...] = (),
    ) -> None:
        add_option(
            OptionEntry(
                id=oid,
                name=name,
                abbrev=abbrev,
                layer=layer,
                option=OptionDef(_learned_policy(oid), always, termination, mode, abbrev),
                learned=True,
                objective=OptionObjective(
                    outcome=outcome,
                    termination=termination,
                    action_mask=mask,
                    mode=mode,
                    penalty=config.mask_penalty,
                ),
                forecast_refs=refs,
                alias_refs=alias_refs,
            )
        )

    def alias(
        aid: int,
        name: str,
        abbrev: str,
        layer: int,
        expression: Expression,
        refs: tuple[int, ...] = (),
        alias_refs: tuple[int, ...] = (),
        boolean: bool = True,
    ) -> None:
        aliases.append(AliasDef(aid, name, abbrev, layer, expression, refs, alias_refs, boolean))

    P, C = ValueKind.PROBABILITY, ValueKind.COUNT
    zero, one = _cumulant(0.0), _cumulant(1.0)

    # ------------------------------------------------------------------
    # Layers 1-3: touch and the touch map
    # ------------------------------------------------------------------
    add_forecast(TOUCH, "T", 1, Action.EF.option_id, OutcomeDef(zero, lambda v: _flag(v.contact)), P)
    add_forecast(2, "TL", 2, Action.ROTL.option_id, OutcomeDef(zero, _terminal_value(TOUCH)), P, (TOUCH,))
    add_forecast(3, "TR", 2, Action.ROTR.option_id, OutcomeDef(zero, _terminal_value(TOUCH)), P, (TOUCH,))
    forecasts.extend(_ring(TOUCH, TM_FIRST, "TM", 3, P, options))

    # ------------------------------------------------------------------
    # Layer 4: rotate to touch, touch adjacent
    # ------------------------------------------------------------------
    rtt_theta = theta("rtt", 1, "option 6 (rtt)")

    def rtt_beta(view: StateView) -> float:
        return 1.0 if view.value(TOUCH) > rtt_theta else floor

    learned(
        RTT, "rotate to touch", "rtt", 4,
        OutcomeDef(zero, _terminal_value(TOUCH)), rtt_beta, ROTATE_OR_TOUCH, refs=(TOUCH,),
    )  # fmt: skip
    add_forecast(TA, "TA", 4, RTT, OutcomeDef(zero, _terminal_value(TOUCH)), P, (TOUCH,))

    # ------------------------------------------------------------------
    # Layer 5: rolling toward touch adjacency
    # ------------------------------------------------------------------
    rftt_theta = theta("rftt", 1, "option 8 (rftt)")

    def rfta_beta(view: StateView) -> float:
        return min(1.0, max(view.value(TA), floor))

    def rftt_beta(view: StateView) -> float:
        return max(_flag(view.value(TA) > rftt_theta), floor)

    rolling(RFTA, "roll forward toward touch adjacent", "rfta", 5, Action.RF, rfta_beta, refs=(TA,))
    rolling(RFTT, "roll forward until touch threshold", "rftt", 5, Action.RF, rftt_beta, refs=(TA,))
    toward = RFTT if config.dta_option == "rftt" else RFTA
    add_forecast(DTA, "DTA", 5, toward, OutcomeDef(one, _terminal(0.0)), C)
    add_forecast(
        NTA, "NTA", 5, toward, OutcomeDef(zero, lambda v: _flag(v.value(TA) > rftt_theta)), P, (TA,)
    )

    # ------------------------------------------------------------------
    # Layer 6: distance-to-TA map
    # ------------------------------------------------------------------
    forecasts.extend(_ring(DTA, DTAM_FIRST, "DTAM", 6, C, options))

    # ------------------------------------------------------------------
    # Layer 7: wall following
    # ------------------------------------------------------------------
    lo = theta("wall", 1, "options 9-12")
    hi = theta("wall", 2, "options 9-12")
    touch_stop = theta("wall", 3, "options 9-12")

    def wall_side(slot: int) -> tuple[Callable[[StateView], bool], Callable[[StateView], float]]:
        fid = dtam_id(slot)

        def initiation(view: StateView) -> bool:
            return lo < view.value(fid) < hi

        def termination(view: StateView) -> float:
            if view.value(TA) > touch_stop or not initiation(view):
                return 1.0
            return floor

        return initiation, termination

    right_init, right_beta = wall_side(3)
    left_init, left_beta = wall_side(9)
    right_refs, left_refs = (dtam_id(3), TA), (dtam_id(9), TA)
    rolling(RFWR, "roll forward along wall on right", "rfwr", 7, Action.RF, right_beta, right_init, right_refs)
    rolling(RFWL, "roll forward along wall on left", "rfwl", 7, Action.RF, left_beta, left_init, left_refs)
    rolling(RBWR, "roll backward along wall on right", "rbwr", 7, Action.RB, right_beta, right_init, right_refs)
    rolling(RBWL, "roll backward along wall on left", "rbwl", 7, Action.RB, left_beta, left_init, left_refs)
    for fid, name, oid in ((WRF, "WRF", RFWR), (WLF, "WLF", RFWL), (WRB, "WRB", RBWR), (WLB, "WLB", RBWL)):
        add_forecast(fid, name, 7, oid, OutcomeDef(one, _terminal(0.0)), C)

    # ------------------------------------------------------------------
    # Layer 8: wall left or right, distance to it
    # ------------------------------------------------------------------
    wlr_theta = theta("wlr", 1, "alias 1 (WLR)")
    walls = (WRF, WLF, WRB, WLB)
    alias(
        WLR, "Wall Left or Right", "WLR", 8,
        lambda value, _alias: _flag(any(value(f) > wlr_theta for f in walls)), walls,
    )  # fmt: skip
    add_option(
        OptionEntry(
            id=MRW,
            name="move randomly until wall left or right",
            abbrev="mrw",
            layer=8,
            option=OptionDef(_constant_policy(UNIFORM), always, _beta_alias(WLR, floor), mode, "mrw"),
            alias_refs=(WLR,),
        )
    )
    learned(
        MCWP, "move to canonical wall position", "mcwp", 8,
        OutcomeDef(zero, _terminal_alias(WLR)), _beta_alias(WLR, floor), alias_refs=(WLR,),
    )  # fmt: skip
    add_forecast(WDA, "WDA", 8, MRW, OutcomeDef(one, _terminal(0.0)), C)
    add_forecast(WDB, "WDB", 8, MCWP, OutcomeDef(one, _terminal(0.0)), C)

    # ------------------------------------------------------------------
    # Layer 9: wall adjacency and the distance-to-wall map
    # ------------------------------------------------------------------
    wa_ta = theta("wa", 1, "alias 2 (WA)")
    wa_wda = theta("wa", 2, "alias 2 (WA)")
    alias(
        WA, "Wall Adjacent", "WA", 9,
        lambda value, _alias: _flag(value(TA) > wa_ta and value(WDA) < wa_wda), (TA, WDA),
    )  # fmt: skip
    rolling(RFW, "roll forward to wall", "rfw", 9, Action.RF, _beta_alias(WA, floor), alias_refs=(WA,))
    add_forecast(DW, "DW", 9, RFW, OutcomeDef(one, _terminal(0.0)), C)
    forecasts.extend(_ring(DW, DWM_FIRST, "DWM", 9, C, options))

    # ------------------------------------------------------------------
    # Layer 10: room-shape aliases and the options built on them
    # ------------------------------------------------------------------
    lrc_tol = theta("lrc", 1, "alias 5 (LRC)")
    fbc_tol = theta("fbc", 1, "alias 6 (FBC)")
    room_theta = theta("r", 1, "alias 7 (R)")
    mh_lrfs = theta("mh", 3, "alias 9 (MH)")
    mh_fbfs = theta("mh", 4, "alias 9 (MH)")
    sr_area = theta("sr", 5, "alias 11 (SR)")
    lr_low = theta("lr", 6, "alias 12 (LR)")
    lr_high = theta("lr", 7, "alias 12 (LR)")
    d0, d3, d6, d9 = dwm_id(0), dwm_id(3), dwm_id(6), dwm_id(9)

    alias(LRFS, "Left-Right Free Space", "LRFS", 10, lambda v, _a: v(d3) + v(d9), (d3, d9), boolean=False)
    alias(FBFS, "Front-back Free Space", "FBFS", 10, lambda v, _a: v(d0) + v(d6), (d0, d6), boolean=False)
    alias(LRC, "Left-right Centered", "LRC", 10, lambda v, _a: _flag(abs(v(d3) - v(d9)) <= lrc_tol), (d3, d9))
    alias(FBC, "Front-Back Centered", "FBC", 10, lambda v, _a: _flag(abs(v(d0) - v(d6)) <= fbc_tol), (d0, d6))
    alias(
        ROOM, "Room", "R", 10,
        lambda v, _a: _flag(all(v(f) < room_theta for f in (d0, d3, d6, d9))), (d0, d3, d6, d9),
    )  # fmt: skip
    alias(
        CR, "Centered in a Room", "CR", 10,
        lambda _v, a: _flag(a(ROOM) == 1.0 and a(LRC) == 1.0 and a(FBC) == 1.0),
        alias_refs=(ROOM, LRC, FBC),
    )  # fmt: skip
    alias(
        MH, "Middle of Hall", "MH", 10,
        lambda _v, a: _flag(a(CR) == 1.0 and a(LRFS) < mh_lrfs and a(FBFS) > mh_fbfs),
        alias_refs=(CR, LRFS, FBFS),
    )  # fmt: skip
    alias(RA, "Room Area", "RA", 10, lambda _v, a: a(LRFS) * a(FBFS), alias_refs=(LRFS, FBFS), boolean=False)
    alias(SR, "Small Room", "SR", 10, lambda _v, a: _flag(a(CR) == 1.0 and a(RA) < sr_area), alias_refs=(CR, RA))
    alias(
        LR, "Large Room", "LR", 10,
        lambda _v, a: _flag(a(CR) == 1.0 and lr_low < a(RA) < lr_high), alias_refs=(CR, RA),
    )  # fmt: skip

    learned(
        GMH, "go to middle of hallway", "gmh", 10,
        OutcomeDef(zero, _terminal_alias(MH)), _beta_alias(MH, floor), alias_refs=(MH,),
    )  # fmt: skip
    learned(
        GCR, "go to center of room", "gcr", 10,
        OutcomeDef(zero, _terminal_alias(CR)), _beta_alias(CR, floor), alias_refs=(CR,),
    )  # fmt: skip
    rolling(
        GFR, "go forward into room", "gfr", 10, Action.RF,
        lambda view: max(view.alias(ROOM), floor), alias_refs=(ROOM,),
    )  # fmt: skip

    # ------------------------------------------------------------------
    # Layer 11: distance to room and the doorway alias
    # ------------------------------------------------------------------
    d_near = theta("d", 1, "alias 13 (D)")
    d_room = theta("d", 2, "alias 13 (D)")
    d_open = theta("d", 3, "alias 13 (D)")
    add_forecast(DR, "DR", 11, GFR, OutcomeDef(one, _terminal(0.0)), C)

    def doorway(v: Callable[[int], float], _a: Callable[[int], float]) -> float:
        # walls close on both sides while the way ahead and behind stays open
        sides = v(dtam_id(3)) < d_near and v(dtam_id(9)) < d_near
        through = v(dtam_id(0)) >= d_open and v(dtam_id(6)) >= d_open
        return _flag(sides and through and v(DR) < d_room)

    alias(DOOR, "Doorway", "D", 11, doorway, (dtam_id(3), dtam_id(9), DTA, dtam_id(6), DR))

    return forecasts, list(options.values()), aliases, theta.missing


def _check_references(registry: Registry) -> list[str]:
    """Every entity whose references are missing, broken or from a later layer."""
    offenders: list[str] = []
    f_layer = {fid: e.layer for fid, e in registry.forecasts.items()}
    o_layer = {oid: e.layer for oid, e in registry.options.items()}
    a_layer = {aid: e.layer for aid, e in registry.aliases.items()}

    nodes: dict[tuple[str, int], tuple[str, int, list[tuple[str, int]]]] = {}
    for fid, e in registry.forecasts.items():
        refs = [("forecast", r) for r in e.forecast_refs] + [("alias", r) for r in e.alias_refs]
        nodes[("forecast", fid)] = (e.name, e.layer, [*refs, ("option", e.option_id)])
    for oid, e in registry.options.items():
        refs = [("forecast", r) for r in e.forecast_refs] + [("alias", r) for r in e.alias_refs]
        refs += [("option", r) for r in e.option_refs]
        nodes[("option", oid)] = (e.abbrev, e.layer, refs)
    for aid, e in registry.aliases.items():
        refs = [("forecast", r) for r in e.forecast_refs] + [("alias", r) for r in e.alias_refs]
        nodes[("alias", aid)] = (e.abbrev, e.layer, refs)

    layer_of = {"forecast": f_layer, "option": o_layer, "alias": a_layer}
    broken: dict[tuple[str, int], str] = {}
    changed = True
    while changed:
        changed = False
        for node, (name, _, refs) in sorted(nodes.items()):
            if node in broken:
                continue
            for kind, rid in refs:
                if rid not in layer_of[kind]:
                    broken[node] = f"references missing {kind} {rid}"
                elif (kind, rid) in broken:
                    broken[node] = f"depends on broken {kind} {rid}"
                else:
                    continue
                changed = True
                break

    for (kind, eid), (name, layer, refs) in sorted(nodes.items()):
        label = f"{kind} {eid} ({name})"
        if (kind, eid) in broken:
            offenders.append(f"{label} {broken[(kind, eid)]}")
            continue
        for ref_kind, rid in refs:
            ref_layer = layer_of[ref_kind][rid]
            if ref_layer > layer:
                offenders.append(
                    f"{label} in layer {layer} references {ref_kind} {rid} from layer {ref_layer}"
                )
            elif kind == "alias" and ref_kind == "alias" and rid >= eid:
                offenders.append(f"{label} references alias {rid}, which is not lower-numbered")
    return offenders


def build_standard_curriculum(
    config: CurriculumConfig | None = None,
    *,
    omit_forecasts: Iterable[int] = (),
    omit_options: Iterable[int] = (),
    omit_aliases: Iterable[int] = (),
) -> Registry:
    """Assemble and validate the 11-layer registry.

    Args:
        config: Thresholds, termination settings and budgets.
        omit_forecasts: Forecast ids to leave out (dependency checks).
        omit_options: Option ids to leave out.
        omit_aliases: Alias ids to leave out.

    Returns:
        The validated Registry.

    Raises:
        CurriculumBuildError: Missing thresholds, dangling references or
            layer-order violations, each naming the offending entity.
    """
    config = config or CurriculumConfig()
    forecasts, options, aliases, missing = _standard_entities(config)
    drop_f, drop_o, drop_a = set(omit_forecasts), set(omit_options), set(omit_aliases)

    registry = Registry(config=config)
    registry.forecasts = {e.id: e for e in forecasts if e.id not in drop_f}
    registry.options = {e.id: e for e in options if e.id not in drop_o}
    registry.aliases = {e.id: e for e in aliases if e.id not in drop_a}

    offenders = missing + _check_references(registry)
    if offenders:
        raise CurriculumBuildError(offenders)

    for n in range(1, LAYER_COUNT + 1):
        registry.layers[n] = LayerSpec(
            number=n,
            forecast_ids=tuple(sorted(f for f, e in registry.forecasts.items() if e.layer == n)),
            option_ids=tuple(sorted(o for o, e in registry.options.items() if e.layer == n)),
            alias_ids=tuple(sorted(a for a, e in registry.aliases.items() if e.layer == n)),
            budget=config.budget(n),
        )
    logger.debug(
        "curriculum: %d forecasts, %d options, %d aliases",
        len(registry.forecasts),
        len(registry.options),
        len(registry.aliases),
    )
    return registry
