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

"""Layered training, DP verification and the full curriculum run."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from forecast_forge.curriculum import (
    DOOR,
    OptionEntry,
    Registry,
    StateView,
    build_standard_curriculum,
)
from forecast_forge.gvf_core import (
    FiniteMdp,
    Gating,
    TdLearner,
    TerminationMode,
    Transition,
    ValueTable,
    learn_option_policy_dp,
    learn_option_policy_q,
    option_action_values,
    sample_termination,
    solve_forecast_dp,
    td_step,
)
from forecast_forge.microworld import (
    ACTION_COUNT,
    Action,
    Observation,
    PixelPermutation,
    Pose,
    WorldSpec,
    as_finite_mdp,
    make_pixel_permutation,
    read_world,
    world_digest,
)
from forecast_forge.state_features import (
    Approximator,
    BackendKind,
    PoseKey,
    StateVector,
    build_state_vector,
    discretize_pose,
    make_approximator,
    predict_all,
    save_params,
    save_policies,
    seed_tabular,
)
from forecast_forge.utils.errors import (
    ConfigurationError,
    GateError,
    MissingEstimateError,
    ParamsError,
)
from forecast_forge.utils.seeding import SHARED_STREAM, option_stream, rng_stream
from forecast_forge.utils.telemetry import worker_count
from forecast_forge.utils.typing import (
    CurriculumConfig,
    ForecastScore,
    LayerStats,
    OptionScore,
    RunConfig,
    VerificationReport,
    load_config,
)

logger = logging.getLogger(__name__)


# ============================================================================
# ORACLE
# ============================================================================


class Oracle:
    """DP-exact values of every forecast and learned option on the pose MDP.

    Layers are solved in introduction order, so each forecast's components
    read exact values of the entities below it.
    """

    def __init__(self, registry: Registry, mdp: FiniteMdp) -> None:
        self.registry = registry
        self.mdp = mdp
        self.config = registry.config
        self.values: dict[int, ValueTable] = {}
        self.actions: dict[int, np.ndarray] = {}
        self.action_values: dict[int, np.ndarray] = {}
        self.solved_layers: set[int] = set()
        self.views = [StateView(p.index, p.pose, p.contact, self) for p in mdp.annotation]
        self.view_mdp = mdp.with_annotation(self.views)

    def estimate(self, view: StateView, forecast_id: int) -> float:
        table = self.values.get(forecast_id)
        if table is None:
            raise MissingEstimateError(f"forecast {forecast_id} has not been solved")
        return float(table.values[view.index])

    def action(self, view: StateView, option_id: int) -> int:
        actions = self.actions.get(option_id)
        if actions is None:
            raise MissingEstimateError(f"option {option_id} has not been solved")
        return int(actions[view.index])

    def solve_through(self, last_layer: int) -> None:
        for n in range(1, last_layer + 1):
            self.solve_layer(n)

    def solve_layer(self, number: int) -> list[ValueTable]:
        if number in self.solved_layers:
            return [self.values[fid] for fid in self.registry.layer(number).forecast_ids]
        for n in range(1, number):
            if n not in self.solved_layers:
                self.solve_layer(n)
        spec = self.registry.layer(number)
        for entry in self.registry.learned_options(number):
            self._learn_option(entry)

        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            for wave in self.registry.solve_waves(spec.forecast_ids):
                for table in pool.map(self._solve, wave):
                    self.values[table.forecast_id] = table
        self.solved_layers.add(number)
        logger.info("oracle: layer %d solved (%d forecasts)", number, len(spec.forecast_ids))
        return [self.values[fid] for fid in spec.forecast_ids]

    def _solve(self, forecast_id: int) -> ValueTable:
        forecast = self.registry.forecast(forecast_id).forecast
        return solve_forecast_dp(
            self.view_mdp,
            forecast,
            tol=self.config.dp_tol,
            max_sweeps=self.config.dp_max_sweeps,
            strict_beta=self.config.strict_beta,
        )

    def _learn_option(self, entry: OptionEntry) -> None:
        objective = entry.objective
        assert objective is not None
        option = learn_option_policy_dp(
            self.view_mdp,
            objective.outcome,
            objective.termination,
            objective.action_mask,
            mode=objective.mode,
            initiation=objective.initiation,
            penalty=objective.penalty,
            tol=self.config.dp_tol,
            max_sweeps=self.config.dp_max_sweeps,
            name=entry.abbrev,
        )
        actions = option.policy.actions  # type: ignore[attr-defined]
        self.actions[entry.id] = actions
        self.action_values[entry.id] = option_action_values(
            self.view_mdp, objective, actions, self.config.dp_tol, self.config.dp_max_sweeps
        )
        logger.debug("oracle: option %d (%s) solved", entry.id, entry.abbrev)

    def table(self, forecast_id: int) -> ValueTable:
        if forecast_id not in self.values:
            self.solve_layer(self.registry.forecast(forecast_id).layer)
        return self.values[forecast_id]


# ============================================================================
# AGENT
# ============================================================================


class Agent:
    """Learning state of a run: one approximator over all forecasts plus policies."""

    def __init__(
        self,
        registry: Registry,
        mdp: FiniteMdp,
        *,
        seed: int = 0,
        backend: BackendKind = "tabular_pose",
        permutation: PixelPermutation | None = None,
        start: Pose | None = None,
    ) -> None:
        self.registry = registry
        self.mdp = mdp
        self.config = registry.config
        self.seed = seed
        self.backend = backend
        pixels = self.config.robot.camera_rays
        self.permutation = permutation or make_pixel_permutation(seed, pixels)
        self.approx: Approximator = make_approximator(
            backend,
            registry.forecasts,
            registry.value_kinds(),
            feature_count=pixels + 1 + len(registry.forecasts) if backend == "linear" else 0,
        )
        self.policies: dict[int, dict[PoseKey, int]] = {}
        self.verified: set[int] = set()
        self.errors: dict[int, float] = {}
        self.visits: dict[int, dict[object, int]] = {}
        self._vectors: dict[int, StateVector] = {}
        self.keys = [discretize_pose(p.pose) for p in mdp.annotation]
        poses = [p.pose for p in mdp.annotation]
        self.start = poses.index(start) if start in poses else 0

    @property
    def linear(self) -> bool:
        return self.backend == "linear"

    def observation(self, index: int, touch: int = 0) -> Observation:
        raw = self.mdp.annotation[index].pixels
        return Observation(pixels=self.permutation.apply(raw), touch=touch)

    def vector_at(self, index: int) -> StateVector:
        """Latest recurrent vector seen at a pose, or the observation with zero estimates."""
        vector = self._vectors.get(index)
        if vector is None:
            zeros = dict.fromkeys(self.approx.forecast_ids, 0.0)
            vector = build_state_vector(self.observation(index), zeros)
        return vector

    def advance(self, vector: StateVector, index: int, touch: int) -> StateVector:
        """Next recurrent vector: new observation followed by the previous predictions."""
        nxt = build_state_vector(self.observation(index, touch), predict_all(self.approx, vector))
        self._vectors[index] = nxt
        return nxt

    def view(self, index: int, vector: StateVector | None = None) -> StateView:
        payload = self.mdp.annotation[index]
        if self.linear and vector is None:
            vector = self.vector_at(index)
        return StateView(index, payload.pose, payload.contact, self, vector)

    def key(self, view: StateView) -> object:
        return view.vector if self.linear else self.keys[view.index]

    def estimate(self, view: StateView, forecast_id: int) -> float:
        return self.approx.predict(self.key(view), forecast_id)

    def action(self, view: StateView, option_id: int) -> int:
        table = self.policies.get(option_id)
        if table is None:
            raise MissingEstimateError(f"option {option_id} has no learned policy yet")
        try:
            return table[self.keys[view.index]]
        except KeyError:
            raise MissingEstimateError(
                f"option {option_id} has no action at pose {view.pose}"
            ) from None

    def snapshot(self) -> FiniteMdp:
        return self.mdp.with_annotation([self.view(i) for i in range(self.mdp.state_count)])

    def store_policy(self, option_id: int, actions: Sequence[int] | np.ndarray) -> None:
        self.policies[option_id] = {k: int(a) for k, a in zip(self.keys, actions, strict=True)}

    def seed_from(self, oracle: Oracle, layers: Sequence[int]) -> None:
        """Copy DP tables and DP policies of the given layers (tabular backend only)."""
        if self.linear:
            raise ConfigurationError("oracle seeding needs the tabular_pose backend")
        for n in layers:
            oracle.solve_layer(n)
            for entry in self.registry.learned_options(n):
                self.store_policy(entry.id, oracle.actions[entry.id])
            for fid in self.registry.layer(n).forecast_ids:
                seed_tabular(self.approx, fid, self.keys, oracle.values[fid].values)

    def adopt(self, loaded: Approximator) -> None:
        """Take over parameters read from a file; ids absent from it stay at zero."""
        if loaded.kind != self.backend:
            raise ParamsError(f"params are for the {loaded.kind} backend, not {self.backend}")
        if loaded.kind == "tabular_pose":
            for fid in loaded.forecast_ids:
                if fid in self.approx.tables:
                    self.approx.tables[fid] = dict(loaded.tables[fid])
            return
        if loaded.feature_count != self.approx.feature_count:
            raise ParamsError(
                f"params have {loaded.feature_count} features, this world needs "
                f"{self.approx.feature_count}"
            )
        rows = {fid: i for i, fid in enumerate(self.approx.forecast_ids)}
        for i, fid in enumerate(loaded.forecast_ids):
            if fid in rows:
                self.approx.weights[rows[fid]] = loaded.weights[i]
                self.approx.bias[rows[fid]] = loaded.bias[i]

    def gate_failures(self, layer: int) -> list[int]:
        gate = self.config.gate
        failing: list[int] = []
        for n in range(1, layer):
            for fid in self.registry.layer(n).forecast_ids:
                if n not in self.verified or not self.errors.get(fid, np.inf) <= gate:
                    failing.append(fid)
        return failing


# ============================================================================
# BEHAVIOR
# ============================================================================


class BehaviorPolicy:
    """Option/primitive mixture that generates experience for every forecast.

    At a decision point an initiable option is followed with probability
    option_prob, otherwise a uniform primitive action is taken.
    """

    def __init__(self, options: Sequence[OptionEntry], option_prob: float) -> None:
        self.options = list(options)
        self.option_prob = option_prob
        self.current: OptionEntry | None = None

    def act(self, view: StateView, rng: np.random.Generator) -> tuple[int, float]:
        """Executed action and its behaviour probability."""
        if self.current is not None:
            probs = np.asarray(self.current.option.policy(view), dtype=float)
            action = _draw(probs, rng)
            return action, float(probs[action])

        p = self.option_prob
        initiable = [o for o in self.options if o.option.initiation(view)]
        rows = [np.asarray(o.option.policy(view), dtype=float) for o in initiable]
        uniform = np.full(ACTION_COUNT, 1.0 / ACTION_COUNT)
        mixture = (1.0 - p) * uniform + p * (np.mean(rows, axis=0) if rows else uniform)

        if initiable and rng.random() < p:
            k = int(rng.integers(len(initiable)))
            self.current = initiable[k]
            action = _draw(rows[k], rng)
        else:
            action = int(rng.integers(ACTION_COUNT))
        return action, float(mixture[action])

    def after_step(self, next_view: StateView, rng: np.random.Generator) -> None:
        option = self.current
        if option is None:
            return
        mode = option.option.termination_mode
        if mode is TerminationMode.ONE_STEP or rng.random() < float(option.option.termination(next_view)):
            self.current = None


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    top = int(np.argmax(probs))
    if probs[top] >= 1.0:
        return top
    return min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), probs.size - 1)


# ============================================================================
# TRAINING
# ============================================================================


def _train_options(agent: Agent, layer: int) -> list[int]:
    trained = []
    config = agent.config
    for entry in agent.registry.learned_options(layer):
        objective = entry.objective
        assert objective is not None
        snapshot = agent.snapshot()
        if config.option_learning == "dp":
            option = learn_option_policy_dp(
                snapshot,
                objective.outcome,
                objective.termination,
                objective.action_mask,
                mode=objective.mode,
                initiation=objective.initiation,
                penalty=objective.penalty,
                tol=config.dp_tol,
                max_sweeps=config.dp_max_sweeps,
                name=entry.abbrev,
            )
        else:
            option = learn_option_policy_q(
                snapshot,
                objective,
                config.qlearning,
                option_stream(agent.seed, entry.id, "qlearn"),
                name=entry.abbrev,
            )
        agent.store_policy(entry.id, option.policy.actions)  # type: ignore[attr-defined]
        trained.append(entry.id)
        logger.info("layer %d: option %d (%s) learned", layer, entry.id, entry.abbrev)
    return trained


def _learners(agent: Agent, forecast_ids: Sequence[int]) -> dict[int, TdLearner]:
    config = agent.config
    alpha = config.linear_alpha if agent.linear and config.linear_alpha else config.alpha
    learners = {}
    for fid in forecast_ids:
        entry = agent.registry.forecast(fid)
        learners[fid] = TdLearner(
            forecast=entry.forecast,
            backend=agent.approx,
            step_size=alpha,
            gating=entry.gating,
            targets=config.targets,
            encode=agent.key,
            decay=config.decay == "visit" and not agent.linear,
            visits=agent.visits.setdefault(fid, {}),
        )
    return learners


def train_layer(
    agent: Agent,
    layer: int,
    budget: int | None = None,
    rng: np.random.Generator | None = None,
    *,
    enforce_gate: bool = True,
    monitor: Callable[[], float] | None = None,
) -> LayerStats:
    """Train the options, then the forecasts, introduced in one layer.

    Every restart_every steps (when configured) the behaviour jumps to the
    next pose of a shuffled cycle over all poses and drops its option.

    Args:
        agent: Learning state; lower layers are read, never updated.
        layer: Layer number 1-11.
        budget: Behaviour steps (defaults to the layer's configured budget).
        rng: Behaviour stream (defaults to the run's per-layer stream).
        enforce_gate: Refuse unless every lower layer verified within the gate.
        monitor: Called at every tenth of the budget; its value is recorded
            in LayerStats.curve next to the step count.

    Returns:
        LayerStats with per-forecast applied/gated counts and action counts.

    Raises:
        GateError: A prerequisite forecast is not verified within the gate.
    """
    registry = agent.registry
    spec = registry.layer(layer)
    if enforce_gate:
        failing = agent.gate_failures(layer)
        if failing:
            raise GateError(layer, failing)
    budget = spec.budget if budget is None else budget
    rng = rng or rng_stream(agent.seed, SHARED_STREAM, f"behavior-layer{layer}")

    stats = LayerStats(layer=layer)
    stats.options_trained = _train_options(agent, layer)
    if budget <= 0 or not spec.forecast_ids:
        return stats

    forecast_ids = list(spec.forecast_ids)
    learners = _learners(agent, forecast_ids)
    stats.applied = dict.fromkeys(forecast_ids, 0)
    stats.gated = dict.fromkeys(forecast_ids, 0)
    available = [e for _, e in sorted(registry.options.items()) if e.layer <= layer]
    behavior = BehaviorPolicy(available, agent.config.option_prob)

    table = agent.mdp.point_next
    annotation = agent.mdp.annotation
    sampled = agent.config.targets == "sampled"
    stops = rng_stream(agent.seed, SHARED_STREAM, f"termination-layer{layer}")
    restart = agent.config.restart_every
    order = np.empty(0, dtype=np.int64)
    cursor = 0
    s = agent.start
    seen = {s}
    vector = agent.vector_at(s) if agent.linear else None
    progress = max(1, budget // 10)
    if monitor is not None:
        stats.curve.append((0, monitor()))

    for t in range(budget):
        if restart and t and t % restart == 0:
            if cursor >= order.size:
                order, cursor = rng.permutation(agent.mdp.state_count), 0
            s = int(order[cursor])
            seen.add(s)
            cursor += 1
            behavior.current = None
            if agent.linear:
                vector = agent.vector_at(s)
            stats.restarts += 1
        view_s = agent.view(s, vector)
        action, b_prob = behavior.act(view_s, rng)
        if table is not None:
            s2 = int(table[s, action])
        else:
            s2 = int(agent.mdp.sample_next(s, action, rng))
        if agent.linear:
            touch = int(action == Action.EF and annotation[s].contact)
            vector = agent.advance(vector, s2, touch)  # type: ignore[arg-type]
        view_s2 = agent.view(s2, vector)

        for fid in forecast_ids:
            learner = learners[fid]
            forecast = learner.forecast
            option, outcome = forecast.option, forecast.outcome
            if not option.initiation(view_s) or (
                learner.gating is Gating.MATCH_SUPPORT and not option.policy(view_s)[action] > 0
            ):
                stats.gated[fid] += 1
                continue
            mode = option.termination_mode
            at = view_s if mode is TerminationMode.PRE_STEP else view_s2
            if mode is TerminationMode.ONE_STEP:
                beta, terminated = 1.0, True
            else:
                beta = float(option.termination(at))
                terminated = sample_termination(option, at, stops) if sampled else beta >= 1.0
            transition = Transition(
                state=view_s,
                action=action,
                next_state=view_s2,
                cumulant=float(outcome.cumulant(view_s, action)),
                terminated=terminated,
                terminal=float(outcome.terminal(at)),
                beta=beta,
            )
            gated_prob = b_prob if learner.gating is Gating.IMPORTANCE_RATIO else None
            result = td_step(learner, transition, action, gated_prob)
            if result.applied:
                stats.applied[fid] += 1
            else:
                stats.gated[fid] += 1

        stats.action_counts[action] += 1
        behavior.after_step(view_s2, rng)
        s = s2
        seen.add(s)
        if (t + 1) % progress == 0:
            if monitor is not None:
                stats.curve.append((t + 1, monitor()))
                err = stats.curve[-1][1]
                logger.info("layer %d: %d/%d steps, error %.4f", layer, t + 1, budget, err)
            else:
                logger.info("layer %d: %d/%d steps", layer, t + 1, budget)

    stats.steps = budget
    stats.visited = len(seen)
    return stats


# ============================================================================
# VERIFICATION
# ============================================================================


def _forecast_errors(
    agent: Agent, oracle: Oracle, forecast_id: int, views: Sequence[StateView]
) -> np.ndarray:
    """Absolute errors on the poses where the forecast is initiable."""
    table = oracle.values[forecast_id]
    states = np.flatnonzero(table.initiable)
    estimates = np.array([agent.estimate(views[i], forecast_id) for i in states])
    return np.abs(estimates - table.values[states]) if states.size else np.zeros(0)


def layer_error(agent: Agent, oracle: Oracle, layer: int) -> float:
    """Mean over the layer's forecasts of their mean error against DP."""
    oracle.solve_layer(layer)
    views = [agent.view(i) for i in range(agent.mdp.state_count)]
    means = [
        float(errors.mean()) if errors.size else 0.0
        for errors in (
            _forecast_errors(agent, oracle, fid, views)
            for fid in agent.registry.layer(layer).forecast_ids
        )
    ]
    return float(np.mean(means)) if means else 0.0


def verify_layer(agent: Agent, oracle: Oracle, layer: int) -> VerificationReport:
    """Compare the agent's estimates and greedy actions with the DP oracle.

    Forecasts are scored on their initiable poses, learned options on every
    reachable pose. A layer verifies when each forecast's mean error is
    within the gate and each option's greedy match reaches option_match.
    """
    registry = agent.registry
    config = agent.config
    tol = config.verify_tol
    oracle.solve_layer(layer)
    report = VerificationReport(tol=tol)
    views = [agent.view(i) for i in range(agent.mdp.state_count)]

    for fid in registry.layer(layer).forecast_ids:
        errors = _forecast_errors(agent, oracle, fid, views)
        if errors.size == 0:
            report.forecasts.append(ForecastScore(layer=layer, forecast_id=fid,
                                                  name=registry.forecast(fid).name,
                                                  max_err=0.0, mean_err=0.0,
                                                  frac_within_tol=1.0))  # fmt: skip
            continue
        report.forecasts.append(
            ForecastScore(
                layer=layer,
                forecast_id=fid,
                name=registry.forecast(fid).name,
                max_err=float(errors.max()),
                mean_err=float(errors.mean()),
                frac_within_tol=float(np.mean(errors <= tol)),
                samples=int(errors.size),
            )
        )

    for entry in registry.learned_options(layer):
        q = oracle.action_values[entry.id]
        chosen = np.array([agent.action(v, entry.id) for v in views])
        best = q.max(axis=1)
        picked = q[np.arange(q.shape[0]), chosen]
        report.options.append(
            OptionScore(
                layer=layer,
                option_id=entry.id,
                name=entry.abbrev,
                match_fraction=float(np.mean(picked >= best - tol)),
                exact_fraction=float(np.mean(chosen == oracle.actions[entry.id])),
                states=int(q.shape[0]),
            )
        )

    for score in report.forecasts:
        agent.errors[score.forecast_id] = score.mean_err
    if report.passed(config.gate, config.option_match):
        agent.verified.add(layer)
    else:
        agent.verified.discard(layer)
    return report


@dataclass
class AnnotationAudit:
    name: str
    marked: int
    spurious: list[Pose] = field(default_factory=list)
    missed: list[Pose] = field(default_factory=list)

    @property
    def exact(self) -> bool:
        return not self.spurious and not self.missed

    def lines(self) -> list[str]:
        out = [f"annotation {self.name}: {self.marked} marked poses, "
               f"{len(self.spurious)} spurious, {len(self.missed)} missed"]  # fmt: skip
        out.extend(f"  spurious {p}" for p in self.spurious)
        out.extend(f"  missed {p}" for p in self.missed)
        return out


def audit_annotations(
    registry: Registry,
    source: Oracle | Agent,
    world: WorldSpec,
    name: str = "doorway",
    alias_id: int = DOOR,
) -> AnnotationAudit:
    """Where an alias fires versus the poses a world file marks with ANNOT."""
    marked = world.annotated(name)
    if isinstance(source, Oracle):
        source.solve_through(registry.alias(alias_id).layer)
        views = source.views
    else:
        views = [source.view(i) for i in range(source.mdp.state_count)]
    audit = AnnotationAudit(name=name, marked=len(marked))
    seen = set()
    for view in views:
        seen.add(view.pose)
        fires = view.alias(alias_id) == 1.0
        if fires and view.pose not in marked:
            audit.spurious.append(view.pose)
        elif not fires and view.pose in marked:
            audit.missed.append(view.pose)
    audit.missed.extend(sorted(p for p in marked if p not in seen))
    return audit


# ============================================================================
# FULL RUN
# ============================================================================


@dataclass
class CurriculumResult:
    report: VerificationReport
    narratives: list[str]
    stats: list[LayerStats]
    last_layer: int
    halted: str | None = None

    @property
    def passed(self) -> bool:
        return self.halted is None

    def text(self, header: str) -> str:
        lines = [header, *self.report.lines(), "", "narratives:"]
        lines.extend(self.narratives)
        curves = [s.curve_line() for s in self.stats if s.curve]
        if curves:
            lines.extend(["", "learning curves (steps:mean_err):", *curves])
        lines.append("")
        if self.halted is None:
            lines.append(f"status: passed through layer {self.last_layer}")
        else:
            lines.append(f"status: halted at layer {self.last_layer}: {self.halted}")
        return "\n".join(lines) + "\n"


def narrate(
    registry: Registry, layer: int, report: VerificationReport, stats: LayerStats | None = None
) -> str:
    """One plain paragraph about a layer's outcome."""
    spec = registry.layer(layer)
    names = ", ".join(registry.forecast(f).name for f in spec.forecast_ids) or "none"
    within = sum(1 for s in report.forecasts if s.mean_err <= registry.config.gate)
    mean = float(np.mean([s.mean_err for s in report.forecasts])) if report.forecasts else 0.0
    parts = [f"Layer {layer} introduced forecasts {names}."]
    if spec.option_ids:
        opts = ", ".join(registry.option(o).abbrev for o in spec.option_ids)
        parts.append(f"It added options {opts}.")
    if spec.alias_ids:
        aliases = ", ".join(registry.alias(a).abbrev for a in spec.alias_ids)
        parts.append(f"It defined aliases {aliases}.")
    if stats is not None and stats.steps:
        parts.append(f"Training took {stats.steps} behaviour steps over {stats.visited} poses.")
        if stats.curve:
            first, last = stats.curve[0][1], stats.curve[-1][1]
            parts.append(f"Mean error fell from {first:.4f} to {last:.4f}.")
    parts.append(
        f"{within} of {len(report.forecasts)} forecasts met the gate, mean error {mean:.4f}."
    )
    for score in report.options:
        parts.append(f"Option {score.name} matched the DP greedy action on "
                     f"{score.match_fraction:.1%} of poses "
                     f"({score.exact_fraction:.1%} exactly).")  # fmt: skip
    return " ".join(parts)


def _halt_reason(report: VerificationReport, config: CurriculumConfig) -> str:
    reasons = []
    offenders = [s.forecast_id for s in report.offenders(config.gate)]
    if offenders:
        reasons.append(f"forecasts {offenders} exceed mean error {config.gate}")
    weak = [s.option_id for s in report.weak_options(config.option_match)]
    if weak:
        reasons.append(f"options {weak} match the DP greedy action below {config.option_match}")
    return "; ".join(reasons)


def run_curriculum(
    run: RunConfig, config: CurriculumConfig | None = None
) -> CurriculumResult:
    """Build, train, verify and persist layers 1..run.through_layer.

    A layer that fails verification halts the run; the partial report is
    still returned (and written when run.out is set).
    """
    config = config or load_config(run.config)
    if run.oracle and run.backend != "tabular_pose":
        raise ConfigurationError("oracle mode needs the tabular_pose backend")
    world = read_world(run.world, config.robot)
    digest = world_digest(world)
    registry = build_standard_curriculum(config)
    mdp = as_finite_mdp(world, config.robot)
    oracle = Oracle(registry, mdp)
    agent = Agent(registry, mdp, seed=run.seed, backend=run.backend, start=world.start)
    out = Path(run.out) if run.out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    report = VerificationReport(tol=config.verify_tol)
    narratives: list[str] = []
    all_stats: list[LayerStats] = []
    halted: str | None = None
    last = 0

    for n in range(1, run.through_layer + 1):
        last = n
        logger.info("layer %d: %s", n, "seeding from oracle" if run.oracle else "training")
        if run.oracle:
            agent.seed_from(oracle, [n])
            stats = LayerStats(layer=n)
        else:
            monitor = partial(layer_error, agent, oracle, n) if config.curves else None
            try:
                stats = train_layer(agent, n, monitor=monitor)
            except GateError as e:
                halted = str(e)
                break
        all_stats.append(stats)
        layer_report = verify_layer(agent, oracle, n)
        report = report.merge(layer_report)
        narratives.append(narrate(registry, n, layer_report, stats))
        if out is not None:
            save_params(agent.approx, out / f"params_layer{n}.tsv", run.seed, digest)
        if n not in agent.verified:
            halted = _halt_reason(layer_report, config)
            break

    result = CurriculumResult(report, narratives, all_stats, last, halted)
    if out is not None:
        save_policies(agent.policies, out / "policies.tsv", run.seed, digest)
        header = (
            f"FORECAST FORGE REPORT seed={run.seed} world={digest} backend={run.backend} "
            f"mode={'oracle' if run.oracle else 'train'}"
        )
        (out / "report.txt").write_text(result.text(header), encoding="utf-8")
    logger.info("curriculum %s at layer %d", "passed" if result.passed else "halted", last)
    return result


# ============================================================================
# BACKEND COMPARISON
# ============================================================================


@dataclass
class BackendComparison:
    """Per-forecast mean error against DP for each backend, layer by layer."""

    names: dict[int, str]
    errors: dict[str, dict[int, float]]
    option_match: dict[str, dict[int, float]] = field(default_factory=dict)

    def lines(self) -> list[str]:
        backends = list(self.errors)
        out = [f"id, name, {', '.join(backends)}"]
        for fid, name in self.names.items():
            cells = [_cell(self.errors[b].get(fid)) for b in backends]
            out.append(f"{fid}, {name}, {', '.join(cells)}")
        return out


def _cell(value: float | None) -> str:
    return "-" if value is None else f"{value:.6f}"


def compare_backends(
    run: RunConfig,
    config: CurriculumConfig | None = None,
    backends: Sequence[BackendKind] = ("tabular_pose", "linear"),
) -> BackendComparison:
    """Train every backend through run.through_layer from the same seed.

    Layers are trained without the gate so a backend that misses the
    tolerance still reports its errors on the layers above.
    """
    config = config or load_config(run.config)
    world = read_world(run.world, config.robot)
    registry = build_standard_curriculum(config)
    mdp = as_finite_mdp(world, config.robot)
    oracle = Oracle(registry, mdp)
    comparison = BackendComparison(names={}, errors={})

    for backend in backends:
        agent = Agent(registry, mdp, seed=run.seed, backend=backend, start=world.start)
        errors = comparison.errors.setdefault(backend, {})
        matches = comparison.option_match.setdefault(backend, {})
        for n in range(1, run.through_layer + 1):
            logger.info("compare: %s layer %d", backend, n)
            train_layer(agent, n, enforce_gate=False)
            report = verify_layer(agent, oracle, n)
            for score in report.forecasts:
                comparison.names[score.forecast_id] = score.name
                errors[score.forecast_id] = score.mean_err
            for option in report.options:
                matches[option.option_id] = option.match_fraction
    return comparison


__all__ = [
    "Agent",
    "AnnotationAudit",
    "BackendComparison",
    "BehaviorPolicy",
    "CurriculumResult",
    "Oracle",
    "audit_annotations",
    "compare_backends",
    "layer_error",
    "narrate",
    "run_curriculum",
    "train_layer",
    "verify_layer",
]
