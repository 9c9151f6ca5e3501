"""Command-line front end.

Commands: ``scenario`` (compile a network description into a model file),
``validate``, ``solve``, ``eval``, ``enumerate``, ``simulate``.  All
structured artifacts are JSON, traces are CSV, and every output is written
atomically.  Exit codes: 0 success, 1 domain errors (invalid model,
dimension mismatch, oracle guard, multichain refusal), 2 I/O or format
errors; argparse usage errors exit 2 with the offending flag named on
stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import controller, evaluate, model as model_mod, scenario, sim, solver
from ._io import FileFormatError, atomic_write_json, atomic_write_text

__all__ = ["main", "parse_args", "run_command"]


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a count >= 1, got {value}")
    return value


def _nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a value >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a value > 0, got {value}")
    return value


def _nodes_list(text: str) -> list:
    try:
        return [_positive_int(part) for part in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad node count list {text!r}: {exc}") from exc


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="decsched",
        description="Decentralized sensor/honeypot scheduling with finite-state controllers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="compile a scenario file into a model file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="scenario JSON path")
    src.add_argument("--default", action="store_true", help="use the built-in 1 sensor + 1 honeypot scenario")
    p.add_argument("--out", required=True, help="model JSON output path")
    p.add_argument("--emit-config", help="also write the scenario actually used")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("validate", help="check a model file against its invariants")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("solve", help="optimize fixed-size controllers for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--nodes", required=True, type=_nodes_list,
                   help="controller sizes: one integer, or comma list per agent")
    p.add_argument("--restarts", type=_positive_int, default=20)
    p.add_argument("--max-outer-iters", type=_positive_int, default=40)
    p.add_argument("--inner-steps", type=_positive_int, default=4)
    p.add_argument("--step-size", type=_positive_float, default=0.5)
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--out", required=True, help="controller JSON output path")
    p.add_argument("--metrics", help="objective/history JSON sidecar path")
    p.add_argument("--emit-plot-data", metavar="PREFIX", help="write PREFIX_history.csv")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("eval", help="exact average reward of a controller on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--controller", required=True)
    p.add_argument("--out", help="EvalReport JSON output path")
    p.add_argument("--require-unichain", action="store_true",
                   help="exit 1 if the induced chain is not unichain")
    p.add_argument("--emit-plot-data", metavar="PREFIX", help="write PREFIX_occupancy.csv")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("enumerate", help="brute-force the best deterministic controller")
    p.add_argument("--model", required=True)
    p.add_argument("--nodes", required=True, type=_nodes_list)
    p.add_argument("--out", required=True, help="controller JSON output path")
    p.add_argument("--report", help="JSON path for the oracle value")
    p.set_defaults(func=_cmd_enumerate)

    p = sub.add_parser("simulate", help="Monte Carlo rollout of a controller")
    p.add_argument("--model", required=True)
    p.add_argument("--controller", required=True)
    p.add_argument("--steps", required=True, type=_positive_int)
    p.add_argument("--replications", type=_positive_int, default=10)
    p.add_argument("--burn-in", type=_nonnegative_int, default=0)
    p.add_argument("--seed", type=_nonnegative_int, default=0)
    p.add_argument("--trace", help="per-step CSV output path")
    p.add_argument("--out", help="summary JSON output path")
    p.add_argument("--emit-plot-data", metavar="PREFIX", help="write PREFIX_reward_per_step.csv")
    p.set_defaults(func=_cmd_simulate)

    return parser.parse_args(argv)


def _nodes_for(model, nodes):
    if len(nodes) == 1:
        return nodes * model.num_agents
    return nodes


def _cmd_scenario(args) -> int:
    config = scenario.default_config() if args.default else scenario.load_config(args.config)
    compiled = scenario.compile(config)
    report = model_mod.validate(compiled)
    if not report.ok:
        print(f"error: compiled model is invalid: {report}", file=sys.stderr)
        return 1
    model_mod.save_model(compiled, args.out)
    if args.emit_config:
        scenario.save_config(config, args.emit_config)
    print(f"wrote model with {compiled.num_states} states to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    compiled = model_mod.load_model(args.model)
    report = model_mod.validate(compiled)
    print(report)
    return 0 if report.ok else 1


def _cmd_solve(args) -> int:
    compiled = model_mod.load_model(args.model)
    config = solver.SolveConfig(
        nodes_per_agent=_nodes_for(compiled, args.nodes),
        restarts=args.restarts,
        max_outer_iters=args.max_outer_iters,
        inner_steps=args.inner_steps,
        step_size=args.step_size,
        tol=args.tol,
        seed=args.seed,
    )
    result = solver.solve(compiled, config)
    controller.save_policy(result.policy, args.out)
    if args.metrics:
        atomic_write_json(args.metrics, result.metrics_dict())
    if args.emit_plot_data:
        lines = ["iteration,objective"]
        lines += [f"{i},{value!r}" for i, value in enumerate(result.history)]
        atomic_write_text(args.emit_plot_data + "_history.csv", "\n".join(lines) + "\n")
    print(f"objective={result.objective!r} restarts={config.restarts} -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    compiled = model_mod.load_model(args.model)
    policy = controller.load_policy(args.controller)
    report = evaluate.average_reward(compiled, policy)
    if args.out:
        atomic_write_json(args.out, report.to_dict())
    if args.emit_plot_data:
        occ = evaluate.occupancy_measure(compiled, policy)
        expected = np.einsum("nsa,sa->ns", occ.pi, compiled.reward)
        mass = occ.pi.sum(axis=2)
        node_digits = model_mod.digit_table(tuple(occ.num_nodes))
        lines = ["node_vector,state,probability,expected_reward"]
        for n in range(mass.shape[0]):
            label = "-".join(map(str, node_digits[n]))
            for s in range(mass.shape[1]):
                lines.append(f"{label},{s},{mass[n, s]!r},{expected[n, s]!r}")
        atomic_write_text(args.emit_plot_data + "_occupancy.csv", "\n".join(lines) + "\n")
    print(
        f"average_reward={report.average_reward!r} "
        f"residual={report.stationarity_residual:.3e} "
        f"classification={report.chain_classification}"
    )
    if args.require_unichain and report.chain_classification != evaluate.UNICHAIN:
        print("error: induced chain is not unichain", file=sys.stderr)
        return 1
    return 0


def _cmd_enumerate(args) -> int:
    compiled = model_mod.load_model(args.model)
    best, value = evaluate.enumerate_deterministic(compiled, _nodes_for(compiled, args.nodes))
    controller.save_policy(best, args.out)
    if args.report:
        atomic_write_json(args.report, {"objective": value})
    print(f"oracle objective={value!r} -> {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    compiled = model_mod.load_model(args.model)
    policy = controller.load_policy(args.controller)
    config = sim.SimConfig(
        steps=args.steps,
        replications=args.replications,
        burn_in=args.burn_in,
        seed=args.seed,
    )
    collect = bool(args.trace or args.emit_plot_data)
    trace = sim.run(compiled, policy, config, collect_records=collect)
    if args.trace:
        sim.write_trace_csv(trace, args.trace)
    if args.out:
        atomic_write_json(args.out, trace.summary_dict())
    if args.emit_plot_data:
        lines = ["replication,t,reward"]
        lines += [f"{rec[0]},{rec[1]},{rec[6]!r}" for rec in trace.records]
        atomic_write_text(args.emit_plot_data + "_reward_per_step.csv", "\n".join(lines) + "\n")
    print(f"pooled_mean={trace.pooled_mean!r} standard_error={trace.standard_error!r}")
    return 0


def run_command(args) -> int:
    """Dispatch a parsed command, mapping failures onto the exit contract."""
    try:
        return args.func(args)
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return run_command(parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
