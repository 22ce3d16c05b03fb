"""``specklebench`` command line: prepare, train, bench, panel, curves.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench
from .dae import TrainingDiverged
from .imaging import DataError, ImageIOError

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat 'key = value' config file")
    common.add_argument("--seed", type=int, help="run seed (overrides config)")
    common.add_argument("--preset", choices=sorted(bench.PRESETS), help="desk or paper scale defaults")
    common.add_argument("--out", type=Path, help="run directory (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="specklebench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build the manifest (generating phantoms if needed)")
    sub.add_parser("train", parents=[common], help="train both autoencoder variants")
    sub.add_parser("bench", parents=[common], help="score all methods and write the report bundle")
    panel = sub.add_parser("panel", parents=[common], help="write a method-comparison strip for one image")
    panel.add_argument("--image", required=True, help="manifest path or file stem")
    panel.add_argument("--variance", type=float, default=0.7)
    curves = sub.add_parser("curves", parents=[common], help="extract SSIM-vs-variance series from a results CSV")
    curves.add_argument("--results", type=Path, help="results CSV (default: <out>/results.csv)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = bench.load_config(args.config, args.preset, {"seed": args.seed, "out": args.out})
        if args.command == "prepare":
            print(bench.cmd_prepare(cfg))
        elif args.command == "train":
            for path in bench.cmd_train(cfg).values():
                print(path)
        elif args.command == "bench":
            bundle = bench.cmd_bench(cfg)
            for key in ("results", "markdown", "curves", "panel"):
                print(bundle[key])
        elif args.command == "panel":
            print(bench.cmd_panel(cfg, args.image, args.variance))
        elif args.command == "curves":
            print(bench.cmd_curves(args.results or Path(cfg.out_dir) / "results.csv"))
    except bench.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ImageIOError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())
