"""Per-step inter-frame foreground score across a full gated run.

Runs the bundled demo (or ``--config``) under a few schedules and prints the
score trace so the effect of the t_b window is visible step by step.

    python3 scripts/score_trace.py --steps 12
"""

import argparse
import tempfile
from pathlib import Path

from trajattn.cli import bundled_config
from trajattn.pipeline import load_config, run_pipeline

SCHEDULES = {
    "no control": (0, 0),
    "guidance only": (None, 0),
    "guidance + decoupled rope": (None, None),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=bundled_config())
    ap.add_argument("--steps", type=int, default=12)
    args = ap.parse_args()

    traces = {}
    for name, (t_a, t_b) in SCHEDULES.items():
        t_a = args.steps * 3 // 5 if t_a is None else t_a
        t_b = max(1, args.steps // 10) if t_b is None else t_b
        cfg = load_config(args.config, {"schedule.total_steps": args.steps,
                                        "schedule.t_a": t_a, "schedule.t_b": t_b})
        cfg.export.formats = ["json"]
        with tempfile.TemporaryDirectory() as d:
            report = run_pipeline(cfg, Path(d))
        traces[name] = [r["inter_frame_fg_score"] for r in report["steps"]]
        print(f"{name}: t_a={t_a} t_b={t_b}")

    names = list(traces)
    print("step " + " ".join(f"{n:>26}" for n in names))
    for s in range(args.steps):
        print(f"{s:>4} " + " ".join(f"{traces[n][s]:>26.5f}" for n in names))


if __name__ == "__main__":
    main()
