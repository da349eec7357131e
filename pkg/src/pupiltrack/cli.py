"""Command line entry point ``pupiltrack``.

Exit codes: 0 success, 1 configuration error, 2 processing error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, load_config
from .em import EMDivergenceError
from .imaging import PGMError, generate_sequence, save_sequence

log = logging.getLogger("pupiltrack")

EXIT_OK, EXIT_CONFIG, EXIT_PROCESSING = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(
        mode=args.mode, out_dir=args.out_dir, seed=args.seed)
    traj, report = pipeline.run(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_csv(traj, out / "trajectory.csv")
    pipeline.write_metrics(report, out / "metrics.txt")
    pipeline.write_plot_data(traj, out / "series")
    if cfg.plots:
        from .plotting import plot_trajectory

        plot_trajectory(traj, out)
    print("\n".join(report.lines()))
    return EXIT_OK


def _cmd_synth(args) -> int:
    cfg = load_config(args.config).with_overrides(seed=args.seed)
    frames, truth = generate_sequence(cfg.synth)
    out = Path(args.out_dir)
    save_sequence(frames, out)
    np.savetxt(out / "truth.txt", truth, fmt="%.6f", header="x y")
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def _cmd_metrics(args) -> int:
    traj = pipeline.read_csv(args.csv)
    print("\n".join(pipeline.compute_metrics(traj).lines()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pupiltrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="detect (and track) a sequence")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", choices=("detect", "track"))
    r.add_argument("--out-dir")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="write a synthetic sequence as PGM frames")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_synth)

    m = sub.add_parser("metrics", help="recompute the metrics report from a CSV")
    m.add_argument("--csv", required=True)
    m.set_defaults(func=_cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pipeline.ZeroFramesError, PGMError, OSError, ValueError,
            EMDivergenceError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROCESSING


if __name__ == "__main__":
    sys.exit(main())
