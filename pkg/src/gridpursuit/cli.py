"""Command-line entry points: `run` (batch matrix), `summarize`, `play`."""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

from .engine import Game, GameConfig
from .grid import GridMap
from .harness import (PAIR_BEHAVIORS, ExperimentMatrix, export_results,
                      load_results, run_batch, summarize)
from .visibility import VisibilityRegion, compute_visibility


def _load_matrix(path: pathlib.Path) -> ExperimentMatrix:
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return ExperimentMatrix.from_dict(data)


def _cmd_run(args) -> int:
    if args.matrix:
        matrix = _load_matrix(pathlib.Path(args.matrix))
    else:
        matrix = ExperimentMatrix()
    if args.map:
        matrix.maps = args.map
    if args.ratio:
        matrix.ratios = args.ratio
    if args.pair:
        matrix.pairs = args.pair
    if args.iterations is not None:
        matrix.iterations = args.iterations
    if args.seed is not None:
        matrix.base_seed = args.seed
    n = len(matrix.cells()) * matrix.iterations
    print(f"running {n} episodes "
          f"({len(matrix.maps)} maps x {len(matrix.ratios)} ratios x "
          f"{len(matrix.pairs)} pairs x {matrix.iterations} iterations, "
          f"parallelism {args.parallelism})")
    rows, episodes = run_batch(matrix, parallelism=args.parallelism,
                               keep_episodes=args.emit_trajectories)
    written = export_results(rows, args.out, episodes=episodes or None)
    failures = sum(1 for r in rows if r.error)
    for s in summarize(rows):
        print(f"{s.map_id:15s} ratio={s.ratio:<4g} {s.pair}: "
              f"mean={s.mean:.3f} median={s.median:.3f} std={s.std:.3f} n={s.n}")
    print(f"wrote {len(written)} files under {args.out}"
          + (f" ({failures} episodes failed to spawn)" if failures else ""))
    return 0


def _cmd_summarize(args) -> int:
    rows = load_results(args.input)
    table = summarize(rows)
    if args.format == "csv":
        print("map_id,ratio,pair,n,mean,std,min,q1,median,q3,max,outliers")
        for s in table:
            outliers = ";".join(repr(v) for v in s.outliers)
            print(f"{s.map_id},{s.ratio!r},{s.pair},{s.n},{s.mean!r},{s.std!r},"
                  f"{s.min!r},{s.q1!r},{s.median!r},{s.q3!r},{s.max!r},{outliers}")
    else:
        header = (f"{'map':15s} {'ratio':>5s} {'pair':4s} {'n':>3s} {'mean':>6s} "
                  f"{'std':>6s} {'min':>5s} {'q1':>5s} {'med':>5s} {'q3':>5s} {'max':>5s}")
        print(header)
        print("-" * len(header))
        for s in table:
            print(f"{s.map_id:15s} {s.ratio:5g} {s.pair:4s} {s.n:3d} {s.mean:6.3f} "
                  f"{s.std:6.3f} {s.min:5.2f} {s.q1:5.2f} {s.median:5.2f} "
                  f"{s.q3:5.2f} {s.max:5.2f}")
    return 0


def render_frame(grid: GridMap, pursuer, evader, region: VisibilityRegion) -> str:
    """ASCII frame: '#' walls, ':' visible cells, P/E agents."""
    rows = [["#" if grid.occupancy[r, c] else "." for c in range(grid.width)]
            for r in range(grid.height)]
    for (r, c) in region.sorted_cells():
        if rows[r][c] == ".":
            rows[r][c] = ":"
    pc = grid.world_to_cell(pursuer.x, pursuer.y)
    ec = grid.world_to_cell(evader.x, evader.y)
    rows[ec.row][ec.col] = "E"
    rows[pc.row][pc.col] = "P"
    return "\n".join("".join(r) for r in rows)


def _cmd_play(args) -> int:
    pursuer, evader = PAIR_BEHAVIORS[args.pair]
    config = GameConfig(map_id=args.map, speed_ratio=args.ratio,
                        pursuer_behavior=pursuer, evader_behavior=evader,
                        seed=args.seed)
    game = Game(config)
    while not game.done:
        rec = game.step()
        if args.render:
            region = compute_visibility(game.grid, rec.pursuer, game.sensor)
            print(render_frame(game.grid, rec.pursuer, rec.evader, region))
        print(f"tick {rec.k:3d}  detected={int(rec.detected)}  mode={rec.pursuer_mode}")
    result = game.result()
    print(f"success_rate {result.success_rate:.4f} over {len(result.ticks)} ticks "
          f"(seed {result.seed})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridpursuit",
        description="Pursuit-evasion tracking experiments on occupancy grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment matrix")
    p_run.add_argument("--matrix", help="JSON/YAML matrix config file")
    p_run.add_argument("--map", action="append", help="map id (repeatable)")
    p_run.add_argument("--ratio", action="append", type=float, help="speed ratio (repeatable)")
    p_run.add_argument("--pair", action="append", choices=sorted(PAIR_BEHAVIORS),
                       help="behavior pair (repeatable)")
    p_run.add_argument("--iterations", type=int)
    p_run.add_argument("--seed", type=int, help="base seed")
    p_run.add_argument("--out", default="results", help="output directory")
    p_run.add_argument("--parallelism", type=int, default=1)
    p_run.add_argument("--emit-trajectories", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_sum = sub.add_parser("summarize", help="summarize exported results")
    p_sum.add_argument("--in", dest="input", required=True,
                       help="results.csv or its directory")
    p_sum.add_argument("--format", choices=["csv", "table"], default="table")
    p_sum.set_defaults(func=_cmd_summarize)

    p_play = sub.add_parser("play", help="run and print a single episode")
    p_play.add_argument("--map", default="brick_room")
    p_play.add_argument("--ratio", type=float, default=1.0)
    p_play.add_argument("--pair", choices=sorted(PAIR_BEHAVIORS), default="S-S")
    p_play.add_argument("--seed", type=int, default=0)
    p_play.add_argument("--render", action="store_true", help="print text frames")
    p_play.set_defaults(func=_cmd_play)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
