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

"""Command-line surface: world checks, oracle solves, training and reports.

Exit status is 0 on success, 1 on a validation or verification failure and
2 on a usage error.
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from scipy import stats

from forecast_forge.curriculum import Registry, build_standard_curriculum
from forecast_forge.gvf_core import FiniteMdp, TerminationMode, mc_return
from forecast_forge.microworld import (
    Action,
    Pose,
    WorldSpec,
    as_finite_mdp,
    enumerate_poses,
    read_world,
    world_digest,
)
from forecast_forge.render import RINGS, render_forecast_map, ring_forecast_ids
from forecast_forge.runner import (
    Agent,
    Oracle,
    audit_annotations,
    compare_backends,
    run_curriculum,
    verify_layer,
)
from forecast_forge.state_features import load_params, load_policies
from forecast_forge.utils.errors import ArgumentError, ForecastForgeError
from forecast_forge.utils.seeding import option_stream, rng_stream
from forecast_forge.utils.telemetry import setup_logging
from forecast_forge.utils.typing import (
    LAYER_COUNT,
    CurriculumConfig,
    RunConfig,
    VerificationReport,
    load_config,
)

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
DEMO_WORLD = DATA_DIR / "worlds" / "two_rooms.world"
DEFAULT_CONFIG = DATA_DIR / "curriculum.conf"

_MODES = {"pre": TerminationMode.PRE_STEP, "post": TerminationMode.POST_STEP, "one": TerminationMode.ONE_STEP}
_BACKENDS = {"tabular": "tabular_pose", "tabular_pose": "tabular_pose", "linear": "linear"}


def parse_pose(text: str) -> Pose:
    """`X,Y,H` -> Pose."""
    parts = text.split(",")
    try:
        x, y, h = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"pose must be X,Y,H integers, got '{text}'") from None
    return Pose(x, y, h)


# ============================================================================
# SHARED SETUP
# ============================================================================


@dataclass
class Context:
    config: CurriculumConfig
    world: WorldSpec
    digest: str
    registry: Registry
    mdp: FiniteMdp
    oracle: Oracle

    def state_of(self, pose: Pose) -> int:
        for i, payload in enumerate(self.mdp.annotation):
            if payload.pose == pose:
                return i
        raise ArgumentError(f"pose {pose} is not reachable in this world")


def _context(args: argparse.Namespace, mode: TerminationMode | None = None) -> Context:
    config = load_config(getattr(args, "config", None))
    if mode is not None:
        config.termination_default = mode
    world = read_world(args.world, config.robot)
    registry = build_standard_curriculum(config)
    mdp = as_finite_mdp(world, config.robot)
    return Context(config, world, world_digest(world), registry, mdp, Oracle(registry, mdp))


def _agent_from_files(
    ctx: Context, params: Path, policies: Path | None, force: bool
) -> tuple[Agent, set[int]]:
    loaded, header = load_params(
        params, world=ctx.digest, kinds=ctx.registry.value_kinds(), force=force
    )
    agent = Agent(
        ctx.registry, ctx.mdp, seed=header.seed, backend=header.backend, start=ctx.world.start  # type: ignore[arg-type]
    )
    agent.adopt(loaded)
    present = set(loaded.forecast_ids)
    path = policies if policies is not None else params.parent / "policies.tsv"
    if path.exists():
        agent.policies = load_policies(path, world=ctx.digest, force=force)
    elif policies is not None:
        raise ArgumentError(f"policies file '{path}' does not exist")
    return agent, present


def _complete_layers(ctx: Context, agent: Agent, present: set[int]) -> int:
    """Highest layer L such that layers 1..L have all parameters and policies."""
    last = 0
    for n in range(1, LAYER_COUNT + 1):
        spec = ctx.registry.layer(n)
        learned = [e.id for e in ctx.registry.learned_options(n)]
        if not set(spec.forecast_ids) <= present or any(o not in agent.policies for o in learned):
            break
        last = n
    return last


# ============================================================================
# SUBCOMMANDS
# ============================================================================


def cmd_world_check(args: argparse.Namespace) -> int:
    config = load_config(getattr(args, "config", None))
    world = read_world(args.world_file, config.robot)
    poses = enumerate_poses(world, config.robot)
    print(f"world {args.world_file}: ok")
    print(f"  digest {world_digest(world)}")
    print(f"  bounds {' '.join(str(v) for v in world.bounds)}")
    print(f"  segments {len(world.segments)}, circles {len(world.circles)}")
    print(f"  start {world.start}, reachable poses {len(poses)}")
    reachable = set(poses)
    for name, marked in world.annotations:
        unreachable = [p for p in marked if p not in reachable]
        print(f"  annotation {name}: {len(marked)} poses, {len(unreachable)} unreachable")
    return 0


def cmd_dp_solve(args: argparse.Namespace) -> int:
    ctx = _context(args, _MODES[args.mode] if args.mode else None)
    if args.tol is not None:
        ctx.config.dp_tol = args.tol
    entry = ctx.registry.forecast(args.forecast)
    table = ctx.oracle.table(args.forecast)
    values = table.values[table.initiable] if table.initiable.any() else table.values
    print(
        f"forecast {entry.id} ({entry.name}) mode={table.mode} states={values.size} "
        f"min={values.min():.6f} max={values.max():.6f} mean={values.mean():.6f} "
        f"residual={table.residual:.3e} sweeps={table.sweeps}"
    )
    if args.out is not None:
        lines = [f"# forecast {entry.id} {entry.name} world={ctx.digest}"]
        lines.extend(
            f"{p.pose}\t{v!r}" for p, v in zip(ctx.mdp.annotation, table.values.tolist(), strict=True)
        )
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_mc_estimate(args: argparse.Namespace) -> int:
    ctx = _context(args)
    if args.samples <= 0:
        raise ArgumentError("--samples must be positive")
    entry = ctx.registry.forecast(args.forecast)
    table = ctx.oracle.table(args.forecast)
    state = ctx.state_of(args.pose)
    rng = rng_stream(args.seed, args.forecast, "mc")
    returns = np.array(
        [
            mc_return(ctx.oracle.view_mdp, state, entry.forecast, rng, args.max_steps)
            for _ in range(args.samples)
        ]
    )
    mean = float(returns.mean())
    sem = float(stats.sem(returns)) if returns.size > 1 else 0.0
    exact = float(table.values[state])
    z = (mean - exact) / sem if sem > 0 else 0.0
    print(
        f"forecast {entry.id} ({entry.name}) at {args.pose}: mc {mean:.6f} +- {sem:.6f} "
        f"(n={returns.size}), dp {exact:.6f}, z={z:+.2f}"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    run = RunConfig(
        world=args.world,
        config=args.config,
        seed=args.seed,
        backend=_BACKENDS[args.backend],
        out=args.out,
        through_layer=args.through_layer,
        oracle=args.oracle,
    )
    result = run_curriculum(run)
    for line in result.report.lines():
        print(line)
    if result.passed:
        print(f"passed through layer {result.last_layer}")
        return 0
    print(f"halted at layer {result.last_layer}: {result.halted}")
    return 1


def cmd_verify(args: argparse.Namespace) -> int:
    ctx = _context(args)
    if args.tol is not None:
        ctx.config.verify_tol = args.tol
        ctx.config.gate = args.tol
    agent, present = _agent_from_files(ctx, Path(args.params), args.policies, args.force)
    through = args.through_layer or _complete_layers(ctx, agent, present)
    if through == 0:
        raise ArgumentError(f"'{args.params}' holds no complete layer")

    report = VerificationReport(tol=ctx.config.verify_tol)
    for n in range(1, through + 1):
        report = report.merge(verify_layer(agent, ctx.oracle, n))
    for line in report.lines():
        print(line)
    offenders = report.offenders(ctx.config.gate)
    weak = report.weak_options(ctx.config.option_match)
    ok = not offenders and not weak
    if offenders:
        print(f"offenders (mean_err > {ctx.config.gate}):")
        for score in offenders:
            print(f"  {score.line()}")
    if weak:
        print(f"weak options (greedy_match < {ctx.config.option_match}):")
        for option in weak:
            print(f"  {option.line()}")

    if args.audit_annotations:
        audit = audit_annotations(ctx.registry, agent, ctx.world, args.audit_annotations)
        for line in audit.lines():
            print(line)
        ok = ok and audit.exact
    return 0 if ok else 1


def cmd_compare(args: argparse.Namespace) -> int:
    run = RunConfig(
        world=args.world, config=args.config, seed=args.seed, through_layer=args.through_layer
    )
    comparison = compare_backends(run, backends=[_BACKENDS[b] for b in args.backends])
    for line in comparison.lines():
        print(line)
    return 0


def cmd_render_map(args: argparse.Namespace) -> int:
    ctx = _context(args)
    ids = ring_forecast_ids(args.forecast_ring)
    if args.forecast is not None:
        ids = [*ids, args.forecast]
    if args.dp:
        values = {fid: ctx.oracle.table(fid).values for fid in ids}
    else:
        agent, _ = _agent_from_files(ctx, Path(args.params), args.policies, args.force)
        views = [agent.view(i) for i in range(ctx.mdp.state_count)]
        values = {fid: np.array([agent.estimate(v, fid) for v in views]) for fid in ids}
    poses = [p.pose for p in ctx.mdp.annotation]
    if args.kind == "ring" and args.pose is None:
        raise ArgumentError("render map --kind ring needs --pose")
    rendered = render_forecast_map(
        values,
        poses,
        kind=args.kind,
        ring=args.forecast_ring,
        pose=args.pose,
        forecast_id=args.forecast,
        bounds=ctx.world.bounds,
    )
    rendered.write(args.out)
    sys.stdout.write(rendered.table)
    return 0


def cmd_rollout_trace(args: argparse.Namespace) -> int:
    ctx = _context(args)
    entry = ctx.registry.option(args.option)
    if entry.layer:
        ctx.oracle.solve_through(entry.layer)
    option = entry.option
    state = ctx.state_of(args.pose)
    views = ctx.oracle.views
    if not option.initiation(views[state]):
        print(f"option {entry.id} ({entry.abbrev}) is not initiable at {args.pose}")
        return 1
    rng = option_stream(args.seed, entry.id, "rollout")
    mode = option.termination_mode
    print(f"option {entry.id} ({entry.abbrev}) from {args.pose}, mode={mode}")
    for t in range(args.max_steps):
        view = views[state]
        if mode is TerminationMode.PRE_STEP:
            beta = float(option.termination(view))
            if rng.random() < beta:
                print(f"{t}\t{view.pose}\t-\t{beta:.4f}\tterminate")
                return 0
        probs = np.asarray(option.policy(view), dtype=float)
        action = int(rng.choice(probs.size, p=probs))
        state = ctx.mdp.sample_next(state, action, rng)
        nxt = views[state]
        if mode is TerminationMode.ONE_STEP:
            beta = 1.0
        elif mode is TerminationMode.POST_STEP:
            beta = float(option.termination(nxt))
        stop = beta >= 1.0 or (mode is TerminationMode.POST_STEP and rng.random() < beta)
        label = Action(action).label
        print(f"{t}\t{view.pose}\t{label}\t{beta:.4f}\t{'terminate' if stop else 'continue'}")
        if stop:
            print(f"end\t{nxt.pose}")
            return 0
    print(f"no termination within {args.max_steps} steps")
    return 1


# ============================================================================
# PARSER
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forecast-forge",
        description="Layered forecasts, options and aliases in a 2D robot microworld.",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    groups = parser.add_subparsers(dest="group", required=True)

    def world_args(p: argparse.ArgumentParser, config: bool = True) -> None:
        p.add_argument("--world", type=Path, default=DEMO_WORLD)
        if config:
            p.add_argument("--config", type=Path, default=DEFAULT_CONFIG)

    world = groups.add_parser("world", help="world file tools")
    world_cmds = world.add_subparsers(dest="command", required=True)
    check = world_cmds.add_parser("check", help="parse, validate and enumerate a world")
    check.add_argument("world_file", type=Path)
    check.add_argument("--config", type=Path, default=None)
    check.set_defaults(func=cmd_world_check)

    dp = groups.add_parser("dp", help="exact dynamic programming")
    dp_cmds = dp.add_subparsers(dest="command", required=True)
    solve = dp_cmds.add_parser("solve", help="solve one forecast on every reachable pose")
    world_args(solve)
    solve.add_argument("--forecast", type=int, required=True)
    solve.add_argument("--mode", choices=sorted(_MODES), default=None)
    solve.add_argument("--tol", type=float, default=None)
    solve.add_argument("--out", type=Path, default=None)
    solve.set_defaults(func=cmd_dp_solve)

    mc = groups.add_parser("mc", help="Monte-Carlo rollouts")
    mc_cmds = mc.add_subparsers(dest="command", required=True)
    estimate = mc_cmds.add_parser("estimate", help="sample returns from one pose")
    world_args(estimate)
    estimate.add_argument("--forecast", type=int, required=True)
    estimate.add_argument("--pose", type=parse_pose, required=True)
    estimate.add_argument("--samples", type=int, default=1000)
    estimate.add_argument("--seed", type=int, default=0)
    estimate.add_argument("--max-steps", type=int, default=100_000)
    estimate.set_defaults(func=cmd_mc_estimate)

    train = groups.add_parser("train", help="run the layered curriculum")
    world_args(train)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--through-layer", type=int, default=LAYER_COUNT)
    train.add_argument("--backend", choices=sorted(_BACKENDS), default="tabular")
    train.add_argument("--out", type=Path, default=None)
    train.add_argument("--oracle", action="store_true", help="seed every layer from DP")
    train.set_defaults(func=cmd_train)

    compare = groups.add_parser("compare", help="train several backends and compare errors")
    world_args(compare)
    compare.add_argument("--seed", type=int, default=0)
    compare.add_argument("--through-layer", type=int, default=3)
    compare.add_argument(
        "--backends", nargs="+", choices=sorted(_BACKENDS), default=["tabular", "linear"]
    )
    compare.set_defaults(func=cmd_compare)

    verify = groups.add_parser("verify", help="compare saved parameters with the oracle")
    world_args(verify)
    verify.add_argument("--params", type=Path, required=True)
    verify.add_argument("--policies", type=Path, default=None)
    verify.add_argument("--tol", type=float, default=None)
    verify.add_argument("--through-layer", type=int, default=None)
    verify.add_argument("--force", action="store_true")
    verify.add_argument("--audit-annotations", default=None, metavar="NAME")
    verify.set_defaults(func=cmd_verify)

    render = groups.add_parser("render", help="render forecast maps")
    render_cmds = render.add_subparsers(dest="command", required=True)
    rmap = render_cmds.add_parser("map", help="ring or heatmap as a P2 graymap")
    world_args(rmap)
    source = rmap.add_mutually_exclusive_group(required=True)
    source.add_argument("--params", type=Path)
    source.add_argument("--dp", action="store_true")
    rmap.add_argument("--policies", type=Path, default=None)
    rmap.add_argument("--force", action="store_true")
    rmap.add_argument("--forecast-ring", choices=sorted(RINGS), default="tm")
    rmap.add_argument("--forecast", type=int, default=None, help="heatmap forecast id")
    rmap.add_argument("--kind", choices=["ring", "heatmap"], default="ring")
    rmap.add_argument("--pose", type=parse_pose, default=None)
    rmap.add_argument("--out", type=Path, required=True)
    rmap.set_defaults(func=cmd_render_map)

    rollout = groups.add_parser("rollout", help="step through one option")
    rollout_cmds = rollout.add_subparsers(dest="command", required=True)
    trace = rollout_cmds.add_parser("trace", help="print each step of an option rollout")
    world_args(trace)
    trace.add_argument("--option", type=int, required=True)
    trace.add_argument("--pose", type=parse_pose, required=True)
    trace.add_argument("--seed", type=int, default=0)
    trace.add_argument("--max-steps", type=int, default=1000)
    trace.set_defaults(func=cmd_rollout_trace)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        setup_logging(args.log_level)
        return int(args.func(args))
    except ForecastForgeError as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
