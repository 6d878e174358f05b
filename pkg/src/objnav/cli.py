"""Command-line entry points.

  objnav run      run an episode suite and write a results CSV
  objnav ablate   run the four-row ablation comparison
  objnav serve    serve one episode over HTTP for the browser UI / human mode
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .apiserve import EpisodeServer, make_http_server
from .harness import (
    DEFAULT_SUITE,
    RunConfig,
    aggregate,
    format_results_table,
    load_episodes,
    metrics_csv,
    run_ablation_suite,
    run_suite,
)
from .llmgw import ModelEndpoint, ModelGateway
from .perception import DetectorConfig


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--episodes", default=str(DEFAULT_SUITE),
                        help="episode suite file (default: bundled 16)")
    parser.add_argument("--planner", choices=["oracle", "remote"], default="oracle")
    parser.add_argument("--endpoint", default="", help="base URL of a remote model endpoint")
    parser.add_argument("--model", default="default", help="remote model name")
    parser.add_argument("--no-stm", action="store_true")
    parser.add_argument("--no-pruner", action="store_true")
    parser.add_argument("--no-captions", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=0,
                        help="override the per-episode step budget")
    parser.add_argument("--miss-rate", type=float, default=0.0)
    parser.add_argument("--fp-rate", type=float, default=0.0)


def _config(args) -> RunConfig:
    return RunConfig(
        planner_backend=args.planner,
        no_stm=args.no_stm, no_pruner=args.no_pruner, no_captions=args.no_captions,
        detector=DetectorConfig(miss_rate=args.miss_rate,
                                false_positive_rate=args.fp_rate),
        seed=args.seed,
    )


def _episodes(args):
    episodes = load_episodes(args.episodes)
    if args.steps > 0:
        episodes = [replace(e, step_budget=args.steps) for e in episodes]
    return episodes


def _gateway_kwargs(args) -> dict:
    if args.planner != "remote":
        return {}
    if not args.endpoint:
        print("--planner remote needs --endpoint", file=sys.stderr)
        raise SystemExit(2)
    return {"gateway": ModelGateway(),
            "endpoint": ModelEndpoint(base_url=args.endpoint, model=args.model)}


def cmd_run(args) -> int:
    from .harness import run_episode

    episodes = _episodes(args)
    cfg = _config(args)
    kwargs = _gateway_kwargs(args)
    metrics = []
    for episode in episodes:
        if args.dump_dir:
            from objnav.harness import EpisodeRunner

            runner = EpisodeRunner(episode, cfg, **kwargs)
            m, _trace = runner.run()
            _write_dumps(Path(args.dump_dir), episode.name, runner)
        else:
            m, _trace = run_episode(episode, cfg, **kwargs)
        metrics.append(m)
    csv_text = metrics_csv(metrics)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"wrote {args.out}")
    else:
        print(csv_text, end="")
    sr, spl = aggregate(metrics)
    print(format_results_table([(f"{args.planner} planner", sr, spl)]))
    return 0


def _write_dumps(out_dir: Path, name: str, runner) -> None:
    """Post-episode inspection files: node records, map grid, arrival times."""
    from .navexec import dump_field, dump_map

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.graph.txt").write_text(runner.graph.dump() + "\n")
    (out_dir / f"{name}.map.txt").write_text(dump_map(runner.emap) + "\n")
    if runner.field is not None:
        (out_dir / f"{name}.field.txt").write_text(dump_field(runner.field) + "\n")


def cmd_ablate(args) -> int:
    episodes = _episodes(args)
    seeds = tuple(range(args.seed, args.seed + args.repeats))
    table = run_ablation_suite(episodes, _config(args), seeds=seeds)
    print(format_results_table([(row, sr, spl) for row, (sr, spl) in table.items()]))
    return 0


def cmd_serve(args) -> int:
    episodes = _episodes(args)
    chosen = next((e for e in episodes if e.name == args.episode), None) if args.episode \
        else episodes[0]
    if chosen is None:
        print(f"episode {args.episode!r} not found", file=sys.stderr)
        return 2
    server = EpisodeServer(chosen, _config(args), mode=args.mode)
    httpd = make_http_server(server, port=args.serve)
    server.start()
    print(f"serving episode {chosen.name} ({args.mode} mode) "
          f"on http://127.0.0.1:{httpd.server_port}", flush=True)
    print("endpoints: GET /state, POST /decision, GET /events", flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="objnav",
                                     description="Object-goal navigation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an episode suite")
    _add_common(run_p)
    run_p.add_argument("--out", default="", help="results CSV path")
    run_p.add_argument("--dump-dir", default="",
                       help="write per-episode graph/map/field dump files here")
    run_p.set_defaults(func=cmd_run)

    abl_p = sub.add_parser("ablate", help="run the ablation comparison")
    _add_common(abl_p)
    abl_p.add_argument("--repeats", type=int, default=1, help="number of seeds")
    abl_p.set_defaults(func=cmd_ablate)

    srv_p = sub.add_parser("serve", help="serve an episode for the browser UI")
    _add_common(srv_p)
    srv_p.add_argument("--serve", type=int, default=8008, help="port")
    srv_p.add_argument("--mode", choices=["human", "auto"], default="human")
    srv_p.add_argument("--episode", default="", help="episode name (default: first)")
    srv_p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
