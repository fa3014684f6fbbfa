"""Command-line entry point: gen, train, oracle, eval, report.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file format
error, 4 internal assertion. Every command writes a JSON run manifest next
to its outputs (atomically, at the end of the run).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import agent, network, oracle, rules
from .env import GOAL, ConfigError, EnvConfig, ReactionEnv
from .molgraph import SmilesError, parse_smiles

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 2, 3, 4
OUT_ENV = "SUGARPATH_OUT"

log = logging.getLogger("sugarpath")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    tmp.replace(path)


def write_manifest(path: Path, command: str, config: dict, seeds, inputs, outputs, t0: float, outcome: str):
    manifest = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_clock": round(time.time() - t0, 3),
        "outcome": outcome,
    }
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV, "."))


def _load_net(path: str, reverse: bool) -> network.ReactionNetwork:
    net = network.load(path)
    return network.reverse(net) if reverse else net


def _species_arg(net: network.ReactionNetwork, text: str) -> int:
    if text.isdigit():
        sid = int(text)
        if sid >= len(net.species):
            raise ConfigError(f"no species with id {sid}")
        return sid
    sid = net.id_of(text)
    if sid is None:
        raise ConfigError(f"species {text!r} is not in the network")
    return sid


def _make_env(net, start, goal, max_steps=20) -> ReactionEnv:
    start_ids = tuple(_species_arg(net, s) for s in start) if start else net.principal_initial
    if goal is not None:
        goal_id = _species_arg(net, goal)
    elif net.principal_goal:
        goal_id = net.principal_goal[0]
    else:
        raise ConfigError("no goal given and the network has none")
    return ReactionEnv(EnvConfig(network=net, start=start_ids, goal=goal_id, max_steps=max_steps))


# -- commands --------------------------------------------------------------


def cmd_gen(args) -> int:
    t0 = time.time()
    if not args.start:
        raise UsageError("gen needs at least one --start species")
    try:
        initial = [parse_smiles(s) for s in args.start]
        goal = parse_smiles(args.goal) if args.goal else None
    except SmilesError as exc:
        raise ConfigError(str(exc)) from exc
    catalog = rules.load_catalog(args.rules)
    if args.select:
        catalog = rules.select(catalog, args.select.split(","))
    flt = network.SpeciesFilter.parse(args.filter) if args.filter else network.SpeciesFilter()
    net = network.expand(initial, catalog, flt, network.Limits(max_species=args.max_species), goal=goal)
    out = Path(args.out)
    network.save(net, out)
    print(f"species={len(net.species)} reactions={len(net.reactions)} "
          f"termination={net.metadata['termination']}")
    if goal is not None:
        print(f"goal_found={'true' if net.goal_ids else 'false'}")
    inputs = [args.rules] if args.rules else []
    write_manifest(out.with_name(out.name + ".manifest.json"), "gen", vars_clean(args), [], inputs,
                   [out], t0, "ok")
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_train(args) -> int:
    t0 = time.time()
    net = _load_net(args.net, args.reverse)
    env = _make_env(net, args.start, args.goal, args.max_steps)
    out_dir = _out_dir(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = agent.PPOConfig(batch_episodes=args.batch)
    stop = None
    target = None
    if args.stop_at_optimum:
        graph = oracle.build_state_graph(env)
        path = oracle.shortest_path(graph)
        if path.exists:
            target = path.length
            stop = agent.greedy_converged(env, target)
    outputs = []
    for seed in args.seed:
        res = agent.train(env, budget=args.budget, seed=seed, cfg=cfg, stop=stop)
        csv_path = out_dir / f"convergence_seed{seed}.csv"
        ckpt = out_dir / f"policy_seed{seed}.ckpt"
        _atomic_write(csv_path, res.csv_text())
        agent.save_checkpoint(res.params, ckpt, cfg, {"seed": seed, "net": Path(args.net).name,
                                                      "reverse": int(args.reverse)})
        outputs += [csv_path, ckpt]
        print(f"seed={seed} trajectories={res.trajectories} best_len={res.best_len} "
              f"seconds={res.seconds:.1f}")
    config = vars_clean(args)
    config["start_ids"] = list(env.config.start)
    config["goal_id"] = env.config.goal
    config["ppo"] = vars(cfg)
    if target is not None:
        config["oracle_length"] = target
    write_manifest(out_dir / "train.manifest.json", "train", config, args.seed, [args.net], outputs, t0, "ok")
    return EXIT_OK


def _records(result: oracle.PathResult, graph: oracle.StateGraph) -> list[tuple[str, object]]:
    degrees = graph.out_degrees()
    return [
        ("exists", "true" if result.exists else "false"),
        ("length", result.length if result.exists else ""),
        ("states", len(graph.nodes)),
        ("edges", len(graph.edges)),
        ("dead_ends", len(graph.dead_ends())),
        ("max_out_degree", max(degrees.values(), default=0)),
    ]


def cmd_oracle(args) -> int:
    t0 = time.time()
    net = _load_net(args.net, args.reverse)
    env = _make_env(net, args.start, args.goal, args.max_steps)
    graph = oracle.build_state_graph(env)
    result = oracle.shortest_path(graph)
    if args.json_lines:
        for k, v in _records(result, graph):
            print(f"{k}={v}")
        for i, label in enumerate(result.labels, 1):
            print(f"step={i} action={label}")
    else:
        for k, v in _records(result, graph):
            print(f"{k}: {v}")
        sys.stdout.write(result.report())
    config = vars_clean(args)
    config.update(start_ids=list(env.config.start), goal_id=env.config.goal, length=result.length)
    write_manifest(_out_dir(args.out_dir) / "oracle.manifest.json", "oracle", config, [], [args.net], [], t0,
                   "ok" if result.exists else "unreachable")
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.time()
    net = _load_net(args.net, args.reverse)
    env = _make_env(net, args.start, args.goal, args.max_steps)
    params, _, _ = agent.load_checkpoint(args.checkpoint)
    if params["Usz"].shape[1] != env.config.n_bits:
        raise ConfigError("checkpoint was trained for a different fingerprint length")
    catalog = rules.load_catalog(args.rules)
    # networks built from another catalog cannot be re-derived from this one
    check = net.catalog_hash == rules.catalog_hash(catalog)
    if not check:
        print("# revalidation skipped: network was not generated from this catalog")
    wins = 0
    lengths = []
    for k in range(args.episodes):
        final, actions, trace = agent.greedy_rollout(env, params)
        checked = oracle.revalidate(env, actions, catalog) if check else trace
        if checked != trace:
            raise AssertionError("rule re-application disagrees with the environment trace")
        print(f"# episode {k + 1} outcome={final.outcome} length={len(actions)}")
        for line in trace:
            print(line)
        if final.outcome == GOAL:
            wins += 1
            lengths.append(len(actions))
    rate = wins / args.episodes if args.episodes else 0.0
    print(f"success_rate={rate:g}")
    if lengths:
        print(f"mean_length={np.mean(lengths):g}")
    inputs = [args.net, args.checkpoint] + ([args.rules] if args.rules else [])
    config = vars_clean(args)
    config.update(success_rate=rate, revalidated=check)
    write_manifest(_out_dir(args.out_dir) / "eval.manifest.json", "eval", config, [], inputs, [], t0, "ok")
    return EXIT_OK


def cmd_report(args) -> int:
    t0 = time.time()
    if not args.csv:
        raise UsageError("report needs at least one --csv file")
    series = []
    for path in args.csv:
        rows = agent.read_convergence_csv(Path(path).read_text())
        series.append((Path(path), rows))
    traces = {}
    for path in args.trace:
        # keep only episode-trace lines, e.g. from saved `sugarpath eval` output
        traces[Path(path).stem] = [ln for ln in Path(path).read_text().splitlines() if ln.startswith("T ")]
    out = Path(args.out)
    _atomic_write(out, render_report(series, traces))
    write_manifest(out.with_name(out.name + ".manifest.json"), "report", vars_clean(args), [],
                   args.csv + args.trace, [out],
                   t0, "ok")
    print(f"wrote {args.out}")
    return EXIT_OK


def _first_reach(rows, length):
    for r in rows:
        if r.best_len is not None and r.best_len <= length:
            return r.trajectory
    return None


def render_report(series, extra_traces=None, stride: int | None = None) -> str:
    """Markdown report: a summary table plus a best-length table per series."""
    lines = ["# Convergence report", "", "| series | trajectories | goal episodes | final best_len |"
             " first trajectory at final best |", "|---|---|---|---|---|"]
    for path, rows in series:
        final = rows[-1].best_len if rows else None
        goals = sum(r.outcome == GOAL for r in rows)
        first = _first_reach(rows, final) if final is not None else None
        lines.append(f"| {path.stem} | {len(rows)} | {goals} | {final if final is not None else '-'} |"
                     f" {first if first is not None else '-'} |")
    lines.append("")
    for path, rows in series:
        lines += [f"## {path.stem}", "", "| trajectory | best_len |", "|---|---|"]
        step = stride or max(1, len(rows) // 50)
        last = None
        for r in rows:
            # every improvement, plus a sample every ``step`` trajectories
            if r.best_len != last or r.trajectory % step == 0 or r is rows[-1]:
                lines.append(f"| {r.trajectory} | {'' if r.best_len is None else r.best_len} |")
            last = r.best_len
        lines.append("")
    for title, trace in (extra_traces or {}).items():
        lines += [f"## {title}", "", "```"] + list(trace) + ["```", ""]
    return "\n".join(lines)


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sugarpath", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="expand a reaction network")
    g.add_argument("--start", nargs="*", default=[])
    g.add_argument("--goal")
    g.add_argument("--rules", help="rule catalog file (default: shipped catalog)")
    g.add_argument("--select", help="comma-separated template id prefixes to keep")
    g.add_argument("--filter", help="species filter, e.g. 'charge=0,1;heavy<=13'")
    g.add_argument("--max-species", type=int, default=network.Limits().max_species)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def env_flags(sp):
        sp.add_argument("--net", required=True)
        sp.add_argument("--start", nargs="*")
        sp.add_argument("--goal")
        sp.add_argument("--reverse", action="store_true")
        sp.add_argument("--max-steps", type=int, default=20)
        sp.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV} or .)")

    t = sub.add_parser("train", help="train the recurrent PPO agent")
    env_flags(t)
    t.add_argument("--budget", type=int, default=50_000)
    t.add_argument("--seed", type=int, nargs="+", default=[0])
    t.add_argument("--batch", type=int, default=agent.PPOConfig().batch_episodes)
    t.add_argument("--stop-at-optimum", action="store_true",
                   help="stop once the greedy policy follows a BFS-shortest path")
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("oracle", help="BFS shortest path and state-graph statistics")
    env_flags(o)
    o.add_argument("--json-lines", action="store_true", help="one key=value record per line")
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("eval", help="greedy rollouts of a checkpoint")
    env_flags(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=1)
    e.add_argument("--rules", help="rule catalog used to re-validate traces")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="merge convergence CSVs into a markdown report")
    r.add_argument("--csv", nargs="*", default=[])
    r.add_argument("--trace", nargs="*", default=[], help="episode trace files to append")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, network.NetworkFormatError, agent.CheckpointError, rules.CatalogError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AssertionError, oracle.ReplayError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
