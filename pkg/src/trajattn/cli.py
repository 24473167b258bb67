"""Command-line entry point: ``trajattn <subcommand> ...``.

Exit codes: 0 success, 2 bad input (config, trajectory, flags), 3 runtime
failure. Every failure prints exactly one ``trajattn: error: ...`` line on
stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ClientUnavailable, ConfigError, MalformedResponse, TrajAttnError
from .lattice import TokenLattice
from .masking import build_self_mask, r_token_set, repeat_token_sets
from .pipeline import (
    FORMATS,
    attention_maps,
    build_plan,
    initial_state,
    load_config,
    make_weights,
    run_pipeline,
    write_attention_exports,
    write_mask_exports,
    write_rope_exports,
)
from .rope import RopeLayout, build_3d_rope, select_anchor, std_rope
from .trajectory import foreground_token_set, min_box_frame, parse_trajectory

PROG = "trajattn"
DATA_DIR = Path(__file__).parent / "data"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def bundled_config(name: str = "demo.yaml") -> Path:
    return DATA_DIR / name


def _add_common(p: argparse.ArgumentParser, formats: bool = True) -> None:
    p.add_argument("--config", type=Path, default=None,
                   help="run config (YAML/JSON); defaults to the bundled demo")
    p.add_argument("--seed", type=int)
    p.add_argument("--anchor", choices=["random", "min-box"])
    p.add_argument("--3d-aware", dest="three_d_aware", action="store_true", default=None)
    p.add_argument("--out", type=Path, help="output directory")
    if formats:
        p.add_argument("--format", dest="formats", action="append", choices=FORMATS,
                       help="export format; repeatable (default: all)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Trajectory-control attention toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the gated control loop and write a report")
    _add_common(run)
    run.add_argument("--steps", type=int)
    run.add_argument("--t-a", dest="t_a", type=int)
    run.add_argument("--t-b", dest="t_b", type=int)

    val = sub.add_parser("validate-trajectory", help="check a trajectory against a lattice")
    val.add_argument("path", type=Path)
    val.add_argument("--frames", type=int)
    val.add_argument("--rows", type=int)
    val.add_argument("--cols", type=int)
    val.add_argument("--config", type=Path, help="take lattice dims from this run config")
    val.add_argument("--seed", type=int, default=0, help="seed for the random anchor")

    masks = sub.add_parser("export-masks", help="write cross/self masks as CSV and PGM")
    _add_common(masks)

    rope = sub.add_parser("export-rope", help="write rotary coordinates as CSV")
    _add_common(rope, formats=False)

    an = sub.add_parser("analyze-attention", help="frame-pair attention maps with/without the decoupled table")
    _add_common(an)
    an.add_argument("--frame-a", type=int, default=0)
    an.add_argument("--frame-b", type=int, default=None, help="default: last frame")
    return parser


def _overrides(args) -> dict:
    ov = {}
    for flag, key in (
        ("seed", "schedule.seed"),
        ("steps", "schedule.total_steps"),
        ("t_a", "schedule.t_a"),
        ("t_b", "schedule.t_b"),
        ("three_d_aware", "schedule.three_d_aware"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            ov[key] = v
    if getattr(args, "anchor", None):
        ov["schedule.anchor_mode"] = args.anchor.replace("-", "_")
    if getattr(args, "formats", None):
        ov["export.formats"] = sorted(set(args.formats))
    return ov


def _load(args):
    path = args.config or bundled_config()
    cfg = load_config(path, _overrides(args))
    out = args.out or cfg.output_dir
    try:
        plan = build_plan(cfg)
    except (ClientUnavailable, MalformedResponse):
        raise
    except TrajAttnError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, plan, Path(out)


def cmd_run(args) -> int:
    cfg, _, out = _load(args)
    report = run_pipeline(cfg, out)
    s = report["schedule"]
    print(f"wrote {out / 'report.json'}")
    print(f"steps={s['total_steps']} t_a={s['t_a']} t_b={s['t_b']} anchor_frame={report['anchor_frame']}")
    sets = report["sets"]
    print(f"|S_fg| = {sets['fg']}  |S_repeat| = {sets['repeat']}  |S_R| = {sets['r']}")
    return 0


def _lattice_for_validation(args, traj) -> TokenLattice:
    if args.config is not None:
        cfg = load_config(args.config)
        return cfg.lattice
    if args.rows is None or args.cols is None:
        raise ConfigError("give --rows and --cols (and optionally --frames) or --config")
    return TokenLattice(args.frames or traj.frames, args.rows, args.cols)


def cmd_validate_trajectory(args) -> int:
    if not args.path.is_file():
        raise ConfigError(f"trajectory file not found: {args.path}")
    traj = parse_trajectory(args.path)
    lattice = _lattice_for_validation(args, traj)
    traj.check(lattice)
    print(f"lattice {lattice.frames}x{lattice.rows}x{lattice.cols} (L={lattice.length})")
    for t, b in enumerate(traj.boxes):
        print(f"frame {t}: box {b.as_tuple()} size {b.height}x{b.width} area {b.area} ok")
    print(f"min-box frame: {min_box_frame(traj)}")

    table = build_3d_rope(lattice, RopeLayout.default(16))
    fg = foreground_token_set(traj, lattice)
    for label, mode in (("min-box", "min_box"), (f"random(seed={args.seed})", "random")):
        anchor = select_anchor(traj, mode, args.seed)
        rep = repeat_token_sets(std_rope(table, traj, anchor), lattice)
        r = r_token_set(rep.all, fg)
        build_self_mask(fg, r, lattice.length)
        line = f"anchor {label} -> frame {anchor}: |S_fg| = {len(fg)}, |S_repeat| = {len(rep)}, "
        if r:
            print(line + f"|S_R| = {len(r)}")
        else:
            print(line + "|S_R| = 0 (STD-RoPE is a no-op)")
    return 0


def cmd_export_masks(args) -> int:
    cfg, plan, out = _load(args)
    for name in write_mask_exports(plan, out, cfg.export.formats):
        print(out / name)
    return 0


def cmd_export_rope(args) -> int:
    _, plan, out = _load(args)
    for name in write_rope_exports(plan, out):
        print(out / name)
    return 0


def cmd_analyze_attention(args) -> int:
    cfg, plan, out = _load(args)
    frames = plan.lattice.frames
    fb = frames - 1 if args.frame_b is None else args.frame_b
    for f in (args.frame_a, fb):
        if not 0 <= f < frames:
            raise ConfigError(f"invalid frame {f}: lattice has {frames} frame(s)")
    x = initial_state(plan, cfg).features
    result = attention_maps(plan, make_weights(cfg), x, args.frame_a, fb)
    for name in write_attention_exports(result, out, cfg.export.formats):
        print(out / name)
    print(json.dumps({k: result["record"][k] for k in ("before", "after", "after_masked")}))
    return 0


COMMANDS = {
    "run": cmd_run,
    "validate-trajectory": cmd_validate_trajectory,
    "export-masks": cmd_export_masks,
    "export-rope": cmd_export_rope,
    "analyze-attention": cmd_analyze_attention,
}


def _fail(code: int, message: str) -> int:
    print(f"{PROG}: error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(2, f"usage: {exc}")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(2, f"ConfigError: {exc}")
    except TrajAttnError as exc:
        # input-shaped problems in validate-trajectory are exit 2; elsewhere runtime
        code = 2 if args.command == "validate-trajectory" else 3
        return _fail(code, f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        return _fail(3, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
