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

"""Forecast algebra over finite MDPs.

A forecast is an option (policy, initiation, termination) paired with an
outcome (cumulant, terminal value). This module solves forecasts exactly,
samples their returns, learns them online with TD(0) and learns option
policies that maximize an outcome.

Component callables never see state indices directly: they receive the
MDP's per-state annotation payload, so the same forecast definition runs
on the DP oracle and on a live agent.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Literal, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from forecast_forge.utils.errors import (
    ArgumentError,
    ConfigurationError,
    DeadStateError,
    DivergentForecastError,
    NotInitiableError,
    RolloutOverrunError,
)

logger = logging.getLogger(__name__)

DEFAULT_MASK_PENALTY = -1e6
DEFAULT_ROLLOUT_CAP = 10**6
_SUM_TOL = 1e-9
_TIE_TOL = 1e-12


class TerminationMode(str, Enum):
    """Where β is assessed relative to the action."""

    PRE_STEP = "pre_step"
    POST_STEP = "post_step"
    ONE_STEP = "one_step"

    def __str__(self) -> str:
        return self.value


class ValueKind(str, Enum):
    PROBABILITY = "probability"
    COUNT = "count"
    RAW = "raw"

    def __str__(self) -> str:
        return self.value


class Gating(str, Enum):
    MATCH_SUPPORT = "match_support"
    IMPORTANCE_RATIO = "importance_ratio"

    def __str__(self) -> str:
        return self.value


# ============================================================================
# DOMAIN TYPES
# ============================================================================


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """States 0..state_count-1, one row-stochastic sparse matrix per action."""

    state_count: int
    action_count: int
    transition: tuple[sp.csr_matrix, ...]
    annotation: Sequence[Any]

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.state_count <= 0 or self.action_count <= 0:
            raise ConfigurationError("an MDP needs at least one state and one action")
        if len(self.transition) != self.action_count:
            raise ConfigurationError(
                f"expected {self.action_count} transition matrices, got {len(self.transition)}"
            )
        if len(self.annotation) != self.state_count:
            raise ConfigurationError("annotation must hold one payload per state")
        for a, matrix in enumerate(self.transition):
            if matrix.shape != (self.state_count, self.state_count):
                raise ConfigurationError(f"action {a}: transition matrix has shape {matrix.shape}")
            if matrix.nnz and (matrix.data.min() < 0):
                raise ConfigurationError(f"action {a}: negative transition probability")
            sums = np.asarray(matrix.sum(axis=1)).ravel()
            bad = np.flatnonzero(np.abs(sums - 1.0) > _SUM_TOL)
            if bad.size:
                raise ConfigurationError(
                    f"action {a}: rows {bad[:10].tolist()} do not sum to 1"
                )

    def payload(self, state: int) -> Any:
        return self.annotation[state]

    @cached_property
    def point_next(self) -> np.ndarray | None:
        """(S, A) successor table when every row is a point distribution."""
        table = np.empty((self.state_count, self.action_count), dtype=np.int64)
        for a, matrix in enumerate(self.transition):
            counts = np.diff(matrix.indptr)
            if np.any(counts != 1):
                return None
            table[:, a] = matrix.indices
        return table

    def next_state(self, state: int, action: int) -> int:
        """Successor under a point distribution."""
        matrix = self.transition[action]
        lo, hi = matrix.indptr[state], matrix.indptr[state + 1]
        if hi - lo != 1:
            raise ArgumentError(f"action {action} at state {state} is not deterministic")
        return int(matrix.indices[lo])

    def sample_next(self, state: int, action: int, rng: np.random.Generator) -> int:
        table = self.point_next
        if table is not None:
            return int(table[state, action])
        matrix = self.transition[action]
        lo, hi = matrix.indptr[state], matrix.indptr[state + 1]
        if hi - lo == 1:
            return int(matrix.indices[lo])
        cdf = np.cumsum(matrix.data[lo:hi])
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return int(matrix.indices[lo + min(k, hi - lo - 1)])

    def with_annotation(self, payloads: Sequence[Any]) -> FiniteMdp:
        return FiniteMdp(
            state_count=self.state_count,
            action_count=self.action_count,
            transition=self.transition,
            annotation=payloads,
        )


@dataclass(frozen=True)
class OptionDef:
    """Behaviour 3-tuple plus the point where termination is assessed."""

    policy: Callable[[Any], Sequence[float]]
    initiation: Callable[[Any], bool]
    termination: Callable[[Any], float]
    termination_mode: TerminationMode = TerminationMode.POST_STEP
    name: str = ""


@dataclass(frozen=True)
class OutcomeDef:
    cumulant: Callable[[Any, int], float]
    terminal: Callable[[Any], float]


@dataclass(frozen=True)
class ForecastDef:
    id: int
    name: str
    option: OptionDef
    outcome: OutcomeDef
    value_kind: ValueKind = ValueKind.RAW


@dataclass(frozen=True, eq=False)
class ValueTable:
    forecast_id: int
    values: np.ndarray
    residual: float
    mode: TerminationMode
    initiable: np.ndarray
    sweeps: int = 0


@dataclass(frozen=True, eq=False)
class ForecastArrays:
    """Every component of a forecast evaluated once on every state."""

    policy: np.ndarray
    beta: np.ndarray
    cumulant: np.ndarray
    terminal: np.ndarray
    initiable: np.ndarray

    @property
    def mean_cumulant(self) -> np.ndarray:
        return (self.policy * self.cumulant).sum(axis=1)


@dataclass(frozen=True)
class Transition:
    """One step as seen by a single forecast.

    beta is the termination probability at the assessment state (s for
    pre_step, s' otherwise); expected-target learners need it.
    """

    state: Any
    action: int
    next_state: Any
    cumulant: float
    terminated: bool
    terminal: float
    beta: float | None = None


@dataclass(frozen=True)
class TdStep:
    target: float
    error: float
    terminated: bool
    applied: bool


class Estimator(Protocol):
    def predict(self, key_or_vector: Any, forecast_id: int) -> float: ...

    def apply_update(
        self, key_or_vector: Any, forecast_id: int, delta: float, alpha: float, weight: float
    ) -> None: ...


class Dynamics(Protocol):
    action_count: int

    def payload(self, state: Any) -> Any: ...

    def sample_next(self, state: Any, action: int, rng: np.random.Generator) -> Any: ...


def _identity(payload: Any) -> Any:
    return payload


def _is_vector(key: Any) -> bool:
    """Linear keys are feature arrays, bare or wrapped with a `values` array."""
    return isinstance(getattr(key, "values", key), np.ndarray)


@dataclass
class TdLearner:
    """Online TD(0) learner for one forecast; owns nothing but its counters."""

    forecast: ForecastDef
    backend: Estimator
    step_size: float = 0.1
    gating: Gating = Gating.MATCH_SUPPORT
    targets: Literal["sampled", "expected"] = "sampled"
    encode: Callable[[Any], Any] = _identity
    decay: bool = False
    visits: dict[Any, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.step_size > 0:
            raise ArgumentError(f"step size must be positive, got {self.step_size}")
        self.gating = Gating(self.gating)

    @property
    def forecast_id(self) -> int:
        return self.forecast.id


@dataclass(frozen=True)
class OptionObjective:
    """What a learned option maximizes and when it stops."""

    outcome: OutcomeDef
    termination: Callable[[Any], float]
    action_mask: Sequence[bool] | Callable[[Any], Sequence[bool]] | None = None
    mode: TerminationMode = TerminationMode.POST_STEP
    initiation: Callable[[Any], bool] | None = None
    penalty: float = DEFAULT_MASK_PENALTY


@dataclass(frozen=True)
class OptionLearner:
    """Action values of a learned option and the schedule that produced them."""

    q_values: np.ndarray
    objective: OptionObjective
    schedule: Any = None

    def greedy(self) -> np.ndarray:
        return greedy_actions(self.q_values)


class TabularPolicy:
    """Deterministic policy looked up by the payload's state index."""

    def __init__(self, actions: np.ndarray, action_count: int) -> None:
        self.actions = np.asarray(actions, dtype=np.int64)
        self._rows = np.eye(action_count)
        self._rows.setflags(write=False)

    def __call__(self, payload: Any) -> np.ndarray:
        return self._rows[self.actions[payload_index(payload)]]


def payload_index(payload: Any) -> int:
    """State index carried by a payload (plain ints are their own index)."""
    if isinstance(payload, (int, np.integer)):
        return int(payload)
    return int(payload.index)


def primitive_policy(action: int, action_count: int) -> Callable[[Any], Sequence[float]]:
    row = tuple(1.0 if a == action else 0.0 for a in range(action_count))
    return lambda _payload: row


def uniform_policy(action_count: int) -> Callable[[Any], Sequence[float]]:
    row = tuple(1.0 / action_count for _ in range(action_count))
    return lambda _payload: row


def always(_payload: Any) -> bool:
    return True


def random_mdp(
    rng: np.random.Generator, state_count: int, action_count: int = 2, branching: int = 3
) -> FiniteMdp:
    """Seeded random MDP whose annotation is the state index itself."""
    matrices = []
    k = max(1, min(branching, state_count))
    for _ in range(action_count):
        rows, cols, data = [], [], []
        for s in range(state_count):
            targets = rng.choice(state_count, size=k, replace=False)
            probs = rng.dirichlet(np.ones(k))
            rows.extend([s] * k)
            cols.extend(targets.tolist())
            data.extend(probs.tolist())
        matrix = sp.csr_matrix((data, (rows, cols)), shape=(state_count, state_count))
        sums = np.asarray(matrix.sum(axis=1)).ravel()
        matrices.append(sp.csr_matrix(sp.diags(1.0 / sums) @ matrix))
    return FiniteMdp(state_count, action_count, tuple(matrices), list(range(state_count)))


# ============================================================================
# TABULATION
# ============================================================================


def tabulate(
    mdp: FiniteMdp,
    forecast: ForecastDef,
    *,
    strict_beta: bool = False,
    all_actions: bool = False,
) -> ForecastArrays:
    """Evaluate a forecast's components on every state of the MDP."""
    S, A = mdp.state_count, mdp.action_count
    option, outcome = forecast.option, forecast.outcome
    mode = TerminationMode(option.termination_mode)
    policy = np.zeros((S, A))
    beta = np.ones(S)
    cumulant = np.zeros((S, A))
    terminal = np.zeros(S)
    initiable = np.zeros(S, dtype=bool)

    for s, payload in enumerate(mdp.annotation):
        initiable[s] = bool(option.initiation(payload))
        if mode is not TerminationMode.ONE_STEP:
            b = float(option.termination(payload))
            if not 0.0 <= b <= 1.0:
                raise ConfigurationError(
                    f"forecast {forecast.id}: termination {b} outside [0, 1] at state {s}"
                )
            if strict_beta and b == 0.0:
                raise ConfigurationError(
                    f"forecast {forecast.id}: strict-beta forbids termination 0 at state {s}"
                )
            beta[s] = b
        terminal[s] = float(outcome.terminal(payload))
        if mode is TerminationMode.PRE_STEP and beta[s] == 1.0:
            continue
        probs = np.asarray(option.policy(payload), dtype=float)
        if probs.shape != (A,) or abs(probs.sum() - 1.0) > _SUM_TOL or probs.min() < 0:
            raise ConfigurationError(
                f"forecast {forecast.id}: policy at state {s} is not a distribution "
                f"over {A} actions ({mode} mode needs it on every reachable state)"
            )
        policy[s] = probs
        for a in range(A):
            if all_actions or probs[a] > 0:
                cumulant[s, a] = float(outcome.cumulant(payload, a))

    return ForecastArrays(policy, beta, cumulant, terminal, initiable)


def policy_matrix(mdp: FiniteMdp, policy: np.ndarray) -> sp.csr_matrix:
    total = sp.csr_matrix((mdp.state_count, mdp.state_count))
    for a, matrix in enumerate(mdp.transition):
        weights = policy[:, a]
        if np.any(weights):
            total = total + sp.diags(weights) @ matrix
    return sp.csr_matrix(total)


def _affine_system(
    mdp: FiniteMdp, arrays: ForecastArrays, mode: TerminationMode
) -> tuple[np.ndarray, sp.csr_matrix]:
    """(g, M) such that the mode's recursion reads f = g + M f."""
    P = policy_matrix(mdp, arrays.policy)
    cbar = arrays.mean_cumulant
    beta, z = arrays.beta, arrays.terminal
    if mode is TerminationMode.PRE_STEP:
        g = beta * z + (1.0 - beta) * cbar
        M = sp.diags(1.0 - beta) @ P
    elif mode is TerminationMode.POST_STEP:
        g = cbar + P @ (beta * z)
        M = P @ sp.diags(1.0 - beta)
    else:
        g = cbar + P @ z
        M = sp.csr_matrix((mdp.state_count, mdp.state_count))
    return np.asarray(g, dtype=float), sp.csr_matrix(M)


def _closed_cycles(M: sp.csr_matrix, g: np.ndarray) -> list[np.ndarray]:
    """Closed classes of the continuation chain on which the sum diverges."""
    n = M.shape[0]
    count, labels = connected_components(M, directed=True, connection="strong")
    coo = M.tocoo()
    inside = labels[coo.row] == labels[coo.col]
    kept = np.bincount(coo.row[inside], weights=coo.data[inside], minlength=n)
    closed = np.ones(count, dtype=bool)
    closed[labels[kept < 1.0 - _SUM_TOL]] = False
    active = np.zeros(count, dtype=bool)
    active[labels[np.abs(g) > 0]] = True
    return [np.flatnonzero(labels == c) for c in np.flatnonzero(closed & active)]


# ============================================================================
# EXACT AND SERIES EVALUATION
# ============================================================================


def solve_forecast_dp(
    mdp: FiniteMdp,
    forecast: ForecastDef,
    tol: float = 1e-10,
    max_sweeps: int = 20_000,
    *,
    strict_beta: bool = False,
    arrays: ForecastArrays | None = None,
) -> ValueTable:
    """Fixed point of the forecast's recursion, to residual <= tol.

    Args:
        mdp: The finite MDP; payloads feed the forecast's callables.
        forecast: Forecast to solve; its option's mode picks the recursion.
        tol: Maximum Bellman residual of the returned values.
        max_sweeps: Sweep budget before the forecast is declared divergent.
        strict_beta: Refuse termination probabilities of exactly 0.
        arrays: Pre-tabulated components, to skip tabulation.

    Returns:
        ValueTable with the values and the residual reached.
    """
    if not tol > 0:
        raise ArgumentError(f"tol must be positive, got {tol}")
    mode = TerminationMode(forecast.option.termination_mode)
    arrays = arrays or tabulate(mdp, forecast, strict_beta=strict_beta)
    g, M = _affine_system(mdp, arrays, mode)

    if mode is TerminationMode.ONE_STEP:
        return ValueTable(forecast.id, g, 0.0, mode, arrays.initiable, 1)

    cycles = _closed_cycles(M, g)
    if cycles:
        raise DivergentForecastError(forecast.id, cycles[0].tolist())

    values = np.zeros(mdp.state_count)
    for sweep in range(1, max_sweeps + 1):
        updated = g + M @ values
        change = float(np.max(np.abs(updated - values))) if values.size else 0.0
        if change <= tol:
            residual = float(np.max(np.abs(g + M @ updated - updated)))
            logger.debug("forecast %s converged in %d sweeps", forecast.id, sweep)
            return ValueTable(forecast.id, updated, residual, mode, arrays.initiable, sweep)
        values = updated

    worst = np.argsort(-np.abs(g + M @ values - values))[:20]
    raise DivergentForecastError(forecast.id, sorted(worst.tolist()))


def evaluate_forecast_series(
    mdp: FiniteMdp, forecast: ForecastDef, K: int, *, arrays: ForecastArrays | None = None
) -> ValueTable:
    """Partial sum of the k-step expansion over an explicit absorbing chain."""
    if K < 0:
        raise ArgumentError(f"K must be >= 0, got {K}")
    mode = TerminationMode(forecast.option.termination_mode)
    if mode is not TerminationMode.PRE_STEP:
        raise ConfigurationError("series evaluation is defined for pre_step forecasts only")
    arrays = arrays or tabulate(mdp, forecast)
    S = mdp.state_count
    beta = arrays.beta
    P = policy_matrix(mdp, arrays.policy)
    M = sp.diags(1.0 - beta) @ P

    # state S absorbs termination; it pays nothing
    chain = sp.bmat(
        [
            [M, sp.csr_matrix(beta.reshape(-1, 1))],
            [sp.csr_matrix((1, S)), sp.csr_matrix(np.ones((1, 1)))],
        ],
        format="csr",
    )
    payout = np.append(beta * arrays.terminal + (1.0 - beta) * arrays.mean_cumulant, 0.0)
    term = payout
    total = payout.copy()
    for _ in range(K):
        term = chain @ term
        total += term
    values = total[:S]
    residual = float(np.max(np.abs(payout[:S] + M @ values - values)))
    return ValueTable(forecast.id, values, residual, mode, arrays.initiable, K)


# ============================================================================
# SAMPLING
# ============================================================================


def sample_termination(option: OptionDef, state: Any, rng: np.random.Generator) -> bool:
    return bool(rng.random() < float(option.termination(state)))


def _sample_action(probs: Sequence[float], rng: np.random.Generator) -> int:
    row = np.asarray(probs, dtype=float)
    top = int(np.argmax(row))
    if row[top] >= 1.0:
        return top
    k = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    return min(k, row.size - 1)


def mc_return(
    mdp_or_env: Dynamics,
    start_state: Any,
    forecast: ForecastDef,
    rng_stream: np.random.Generator,
    max_steps: int = DEFAULT_ROLLOUT_CAP,
) -> float:
    """One sampled return of the forecast from start_state."""
    env = mdp_or_env
    option, outcome = forecast.option, forecast.outcome
    mode = TerminationMode(option.termination_mode)
    state = start_state
    payload = env.payload(state)
    if not option.initiation(payload):
        raise NotInitiableError(f"forecast {forecast.id} is not initiable at state {state}")

    total = 0.0
    for _ in range(max_steps):
        if mode is TerminationMode.PRE_STEP and sample_termination(option, payload, rng_stream):
            return total + float(outcome.terminal(payload))
        action = _sample_action(option.policy(payload), rng_stream)
        total += float(outcome.cumulant(payload, action))
        state = env.sample_next(state, action, rng_stream)
        payload = env.payload(state)
        if mode is TerminationMode.ONE_STEP:
            return total + float(outcome.terminal(payload))
        if mode is TerminationMode.POST_STEP and sample_termination(option, payload, rng_stream):
            return total + float(outcome.terminal(payload))
    raise RolloutOverrunError(
        f"forecast {forecast.id}: rollout from {start_state} exceeded {max_steps} steps"
    )


# ============================================================================
# TEMPORAL-DIFFERENCE LEARNING
# ============================================================================


def td_target(
    transition: Transition, forecast: ForecastDef, estimator: Callable[[Any], float]
) -> float:
    """Bootstrapped target: the terminal value on termination, else c + f(s')."""
    if transition.terminated:
        if forecast.option.termination_mode is TerminationMode.PRE_STEP:
            return float(transition.terminal)
        return float(transition.cumulant + transition.terminal)
    return float(transition.cumulant + estimator(transition.next_state))


def _expected_target(
    transition: Transition, forecast: ForecastDef, estimator: Callable[[Any], float]
) -> float:
    if transition.beta is None:
        raise ArgumentError("expected targets need the termination probability (beta)")
    beta = float(transition.beta)
    mode = forecast.option.termination_mode
    stop = (
        float(transition.terminal)
        if mode is TerminationMode.PRE_STEP
        else float(transition.cumulant + transition.terminal)
    )
    if beta >= 1.0:
        return stop
    go = float(transition.cumulant + estimator(transition.next_state))
    return beta * stop + (1.0 - beta) * go


def td_step(
    learner: TdLearner,
    transition: Transition,
    executed_action: int,
    behavior_prob: float | None = None,
) -> TdStep:
    """Gate, compute the TD error and update the learner's backend."""
    if learner.gating is Gating.IMPORTANCE_RATIO and not (behavior_prob and behavior_prob > 0):
        raise ArgumentError("importance-ratio gating needs a positive behavior probability")

    forecast = learner.forecast
    fid = forecast.id
    backend, encode = learner.backend, learner.encode
    key = encode(transition.state)

    def estimate_next(payload: Any) -> float:
        return backend.predict(encode(payload), fid)

    if learner.targets == "expected":
        target = _expected_target(transition, forecast, estimate_next)
    else:
        target = td_target(transition, forecast, estimate_next)
    error = target - backend.predict(key, fid)

    pi = float(forecast.option.policy(transition.state)[executed_action])
    if learner.gating is Gating.MATCH_SUPPORT:
        weight = 1.0 if pi > 0 else 0.0
    else:
        weight = pi / float(behavior_prob)  # type: ignore[arg-type]
    if weight == 0.0:
        return TdStep(target, error, transition.terminated, applied=False)

    alpha = learner.step_size
    if not _is_vector(key):
        if learner.decay:
            n = learner.visits.get(key, 0) + 1
            learner.visits[key] = n
            alpha = max(alpha, 1.0 / n)
        # a table entry never steps past its target
        weight = min(weight, 1.0 / alpha)
    backend.apply_update(key, fid, error, alpha, weight)
    return TdStep(target, error, transition.terminated, applied=True)


# ============================================================================
# OPTION LEARNING
# ============================================================================


def _mask_table(
    mdp: FiniteMdp, action_mask: Sequence[bool] | Callable[[Any], Sequence[bool]] | None
) -> np.ndarray:
    S, A = mdp.state_count, mdp.action_count
    if action_mask is None:
        return np.ones((S, A), dtype=bool)
    if callable(action_mask):
        return np.array([list(action_mask(p)) for p in mdp.annotation], dtype=bool).reshape(S, A)
    row = np.asarray(list(action_mask), dtype=bool)
    if row.shape != (A,):
        raise ConfigurationError(f"action mask needs {A} entries")
    return np.tile(row, (S, 1))


def greedy_actions(q_values: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Lowest-index action within tie tolerance of each row's maximum."""
    q = np.where(mask, q_values, -np.inf) if mask is not None else q_values
    best = q.max(axis=1, keepdims=True)
    near = q >= best - _TIE_TOL * np.maximum(1.0, np.abs(best))
    return np.argmax(near, axis=1)


def greedy_policy(q_values: np.ndarray, mask: np.ndarray | None = None) -> TabularPolicy:
    return TabularPolicy(greedy_actions(q_values, mask), q_values.shape[1])


def policy_from_actions(actions: Sequence[int], action_count: int) -> TabularPolicy:
    return TabularPolicy(np.asarray(actions, dtype=np.int64), action_count)


def _objective_arrays(
    mdp: FiniteMdp, objective: OptionObjective
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    S, A = mdp.state_count, mdp.action_count
    mask = _mask_table(mdp, objective.action_mask)
    initiation = objective.initiation or always
    cumulant = np.zeros((S, A))
    beta = np.ones(S)
    terminal = np.zeros(S)
    initiable = np.zeros(S, dtype=bool)
    for s, payload in enumerate(mdp.annotation):
        initiable[s] = bool(initiation(payload))
        beta[s] = float(objective.termination(payload))
        terminal[s] = float(objective.outcome.terminal(payload))
        for a in range(A):
            cumulant[s, a] = float(objective.outcome.cumulant(payload, a))
    cumulant = np.where(mask, cumulant, cumulant + objective.penalty)
    dead = np.flatnonzero(initiable & ~mask.any(axis=1))
    if dead.size:
        raise DeadStateError(dead.tolist())
    return mask, cumulant, beta, terminal, initiable


def _action_values(
    mdp: FiniteMdp,
    mode: TerminationMode,
    values: np.ndarray,
    cumulant: np.ndarray,
    beta: np.ndarray,
    terminal: np.ndarray,
) -> np.ndarray:
    q = np.empty((mdp.state_count, mdp.action_count))
    carry = beta * terminal + (1.0 - beta) * values
    for a, P in enumerate(mdp.transition):
        if mode is TerminationMode.POST_STEP:
            q[:, a] = cumulant[:, a] + P @ carry
        elif mode is TerminationMode.PRE_STEP:
            q[:, a] = beta * terminal + (1.0 - beta) * (cumulant[:, a] + P @ values)
        else:
            q[:, a] = cumulant[:, a] + P @ terminal
    return q


def learn_option_policy_dp(
    mdp: FiniteMdp,
    objective: OutcomeDef,
    termination: Callable[[Any], float],
    action_mask: Sequence[bool] | Callable[[Any], Sequence[bool]] | None = None,
    *,
    mode: TerminationMode = TerminationMode.POST_STEP,
    initiation: Callable[[Any], bool] | None = None,
    penalty: float = DEFAULT_MASK_PENALTY,
    tol: float = 1e-10,
    max_iterations: int = 200,
    max_sweeps: int = 20_000,
    name: str = "",
) -> OptionDef:
    """Policy iteration on the maximizing form of the forecast recursion.

    Returns:
        A deterministic OptionDef whose policy is a TabularPolicy; ties go
        to the lowest-index unmasked action.
    """
    spec = OptionObjective(objective, termination, action_mask, mode, initiation, penalty)
    arrays = _objective_arrays(mdp, spec)
    mask = arrays[0]
    actions = np.argmax(mask, axis=1)

    for iteration in range(1, max_iterations + 1):
        q = _evaluate_actions(mdp, mode, actions, arrays, tol, max_sweeps)
        improved = greedy_actions(q, mask)
        if np.array_equal(improved, actions):
            logger.debug("policy iteration %s stable after %d iterations", name, iteration)
            break
        actions = improved
    else:
        logger.warning("policy iteration %s hit %d iterations", name, max_iterations)

    return OptionDef(
        policy=TabularPolicy(actions, mdp.action_count),
        initiation=initiation or always,
        termination=termination,
        termination_mode=mode,
        name=name,
    )


def _iterate(M: sp.csr_matrix, g: np.ndarray, tol: float, max_sweeps: int) -> np.ndarray:
    values = np.zeros_like(g)
    for _ in range(max_sweeps):
        updated = g + M @ values
        if np.max(np.abs(updated - values)) <= tol:
            return updated
        values = updated
    return values


def _evaluate_actions(
    mdp: FiniteMdp,
    mode: TerminationMode,
    actions: np.ndarray,
    arrays: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray],
    tol: float,
    max_sweeps: int,
) -> np.ndarray:
    _, cumulant, beta, terminal, initiable = arrays
    if mode is TerminationMode.ONE_STEP:
        beta = np.ones_like(beta)
    policy = np.zeros((mdp.state_count, mdp.action_count))
    policy[np.arange(mdp.state_count), actions] = 1.0
    g, M = _affine_system(mdp, ForecastArrays(policy, beta, cumulant, terminal, initiable), mode)
    values = g if mode is TerminationMode.ONE_STEP else _iterate(M, g, tol, max_sweeps)
    return _action_values(mdp, mode, values, cumulant, beta, terminal)


def option_action_values(
    mdp: FiniteMdp,
    objective: OptionObjective,
    actions: Sequence[int] | np.ndarray,
    tol: float = 1e-10,
    max_sweeps: int = 20_000,
) -> np.ndarray:
    """(S, A) action values of a deterministic option policy under its objective."""
    arrays = _objective_arrays(mdp, objective)
    return _evaluate_actions(
        mdp, objective.mode, np.asarray(actions, dtype=np.int64), arrays, tol, max_sweeps
    )


def learn_option_policy_q(
    env: FiniteMdp,
    objective: OptionObjective,
    schedule: Any,
    rng_stream: np.random.Generator,
    *,
    name: str = "",
) -> OptionDef:
    """Tabular Q-learning with expected termination at each successor.

    Args:
        env: Dynamics with enumerable states (a FiniteMdp).
        objective: Outcome, termination, action mask and mode to maximize.
        schedule: Object with episodes, step_size, max_episode_steps, starts and
            epsilon(episode), e.g. utils.typing.QSchedule.
        rng_stream: Generator for starts, exploration and termination draws.

    Returns:
        Deterministic OptionDef from the greedy Q policy (lowest index on ties).
    """
    if schedule.episodes <= 0:
        raise ArgumentError("a Q-learning schedule needs at least one episode")
    q = _q_learn(env, objective, schedule, rng_stream)
    mask = _mask_table(env, objective.action_mask)
    return OptionDef(
        policy=TabularPolicy(greedy_actions(q, mask), env.action_count),
        initiation=objective.initiation or always,
        termination=objective.termination,
        termination_mode=objective.mode,
        name=name,
    )


def _q_learn(
    env: FiniteMdp,
    objective: OptionObjective,
    schedule: Any,
    rng: np.random.Generator,
) -> np.ndarray:
    mask, cumulant, beta, terminal, initiable = _objective_arrays(env, objective)
    mode = objective.mode
    S, A = env.state_count, env.action_count
    q = np.where(mask, 0.0, -np.inf)
    admissible = [np.flatnonzero(mask[s]) for s in range(S)]
    starts = np.flatnonzero(initiable)
    if starts.size == 0:
        raise NotInitiableError("the option is not initiable anywhere")
    table = env.point_next
    alpha = schedule.step_size
    exploring = schedule.starts == "pairs"
    pairs = np.array([(s, a) for s in starts for a in admissible[s]], dtype=np.int64)
    order = np.empty(0, dtype=np.int64)
    cursor = 0

    def best(s: int) -> float:
        v = q[s].max()
        return float(v) if np.isfinite(v) else 0.0

    for episode in range(schedule.episodes):
        epsilon = schedule.epsilon(episode)
        first = -1
        if exploring and pairs.size:
            if cursor >= order.size:
                order, cursor = rng.permutation(len(pairs)), 0
            s, first = (int(v) for v in pairs[order[cursor]])
            cursor += 1
        else:
            s = int(starts[rng.integers(starts.size)])
        for _ in range(schedule.max_episode_steps):
            if mode is TerminationMode.PRE_STEP and rng.random() < beta[s]:
                break
            choices = admissible[s]
            if first >= 0:
                a, first = first, -1
            elif rng.random() < epsilon:
                a = int(choices[rng.integers(choices.size)])
            else:
                a = int(np.argmax(q[s]))
            s2 = int(table[s, a]) if table is not None else env.sample_next(s, a, rng)
            if mode is TerminationMode.POST_STEP:
                target = cumulant[s, a] + beta[s2] * terminal[s2] + (1.0 - beta[s2]) * best(s2)
            elif mode is TerminationMode.PRE_STEP:
                target = beta[s] * terminal[s] + (1.0 - beta[s]) * (cumulant[s, a] + best(s2))
            else:
                target = cumulant[s, a] + terminal[s2]
            q[s, a] += alpha * (target - q[s, a])
            if mode is TerminationMode.ONE_STEP:
                break
            if mode is TerminationMode.POST_STEP and rng.random() < beta[s2]:
                break
            s = s2
    return q


def policy_value(
    mdp: FiniteMdp,
    option: OptionDef,
    outcome: OutcomeDef,
    tol: float = 1e-10,
) -> ValueTable:
    """Value of following an option under an outcome (option-optimality checks)."""
    return solve_forecast_dp(mdp, ForecastDef(0, option.name or "option", option, outcome), tol)
