"""Command line interface: run one episode, sweep the grid, render reports."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .config import RunConfig, load_config_file
from .control import ImpedanceParams
from .harness import (
    SweepGrid, default_workers, render_grid_table, run_sweep, summarize,
    sweep_csv_to_table, write_trace_csv,
)
from .model import RobotModel, load_model_file
from .sequence import run_episode


def _load_inputs(args):
    model = load_model_file(args.model) if args.model else RobotModel()
    cfg = load_config_file(args.config) if args.config else RunConfig()
    return model, cfg


def _cmd_run(args) -> int:
    model, cfg = _load_inputs(args)
    imp = None
    if args.params:
        try:
            m, d, k = (float(x) for x in args.params.split(","))
        except ValueError:
            print("error: --params expects 'm,d,k'", file=sys.stderr)
            return 2
        imp = ImpedanceParams(mass_kg=m, damping_nspm=d, stiffness_npm=k)
    trace = run_episode(model, cfg, imp, mode=args.mode, omega0=args.omega0)
    s = summarize(trace)
    print(f"mode={args.mode or cfg.sequence.mode} "
          f"caged={s.caged} fail={s.fail_reason or '-'} "
          f"peak_force={s.max_force:.3g} N hits={s.hit_count} "
          f"contacts={s.contact_count} final_omega={s.final_omega:.3g} rad/s "
          f"t_end={s.duration:.2f} s")
    if args.trace:
        write_trace_csv(trace, args.trace)
        print(f"trace written to {args.trace}")
    return 0


def _load_grid(path) -> SweepGrid:
    if path is None:
        return SweepGrid()
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f.read()) or {}
    kwargs = {}
    for key, name in (("m_list", "m_list"), ("d_list", "d_list"), ("k_list", "k_list")):
        if key in data:
            kwargs[name] = tuple(float(x) for x in data[key])
    if "omega0" in data:
        kwargs["omega0"] = float(data["omega0"])
    return SweepGrid(**kwargs)


def _cmd_sweep(args) -> int:
    model, cfg = _load_inputs(args)
    grid = _load_grid(args.grid)
    workers = args.workers or default_workers()

    def progress(done, total, cell):
        if args.quiet:
            return
        print(f"\r{done}/{total} cells", end="", file=sys.stderr, flush=True)

    result = run_sweep(model, cfg, grid, workers=workers, out_dir=args.out,
                       progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    print(render_grid_table(result))
    if args.out:
        print(f"artifacts written to {args.out}")
    if result.errors:
        print(f"{len(result.errors)} cells errored", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    src = Path(args.input)
    csv_path = src / "sweep_summary.csv" if src.is_dir() else src
    if not csv_path.exists():
        print(f"error: {csv_path} not found", file=sys.stderr)
        return 2
    if args.format == "table":
        print(sweep_csv_to_table(csv_path))
    else:
        print(csv_path.read_text(encoding="utf-8"), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="detumble",
        description="Planar dual-arm space robot detumbling/caging simulator")
    p.add_argument("--model", help="model YAML overriding the built-in parameters")
    p.add_argument("--config", help="run configuration YAML")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one episode")
    r.add_argument("--params", help="impedance parameters 'm,d,k'")
    r.add_argument("--mode", choices=["detumble", "direct"], default=None)
    r.add_argument("--omega0", type=float, default=None, help="initial target spin [rad/s]")
    r.add_argument("--trace", help="write the episode trace CSV here")
    r.set_defaults(fn=_cmd_run)

    s = sub.add_parser("sweep", help="run the impedance parameter grid")
    s.add_argument("--grid", help="grid YAML (m_list/d_list/k_list/omega0); default grid otherwise")
    s.add_argument("--out", help="directory for sweep_summary.csv and grid_table.txt")
    s.add_argument("--workers", type=int, default=None,
                   help=f"process count (default: $DETUMBLE_WORKERS or cpu count, max 8)")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(fn=_cmd_sweep)

    rep = sub.add_parser("report", help="render a stored sweep")
    rep.add_argument("--in", dest="input", required=True,
                     help="sweep output directory or summary CSV")
    rep.add_argument("--format", choices=["table", "csv"], default="table")
    rep.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
