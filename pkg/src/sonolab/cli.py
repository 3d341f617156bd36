"""``sonolab <command> --config FILE [--seed N] [--out DIR] [--force]``.

Exit codes: 0 success, 2 invalid config or input data, 3 missing or
mismatched prerequisite artifacts.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .synth import make_corpus, make_image_pool

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ = 0, 2, 3

DESK_CONFIG = """\
# desk-scale experiment on the synthetic corpus
manifest = corpus/manifest.jsonl
image_pool = images/pool.jsonl
image_pool_vectors = images/pool.emb
out = run
schedule_N = 50
beta_start = 0.002
beta_end = 0.4
epochs = 300
lr = 1e-3
guidance = 2.0
samples_per_category = 8
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="sonolab", description="Clustering-guided, visually conditioned sound generation")
    p.add_argument("command", choices=list(pipeline.COMMANDS) + ["run", "make-corpus"],
                   help="pipeline stage, 'run' for every stage, or 'make-corpus' for the synthetic corpus")
    p.add_argument("--config", help="flat key = value experiment file")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--out", help="run directory (overrides 'out' in the config)")
    p.add_argument("--force", action="store_true", help="accept artifacts built with a different config")
    return p


def _make_corpus(args):
    root = Path(args.out or "sonolab-desk")
    seed = args.seed or 0
    make_corpus(root / "corpus", seed=seed)
    make_image_pool(root / "images", seed=seed)
    (root / "experiment.cfg").write_text(DESK_CONFIG, encoding="utf-8")
    print(f"wrote corpus, image pool and experiment.cfg under {root}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "make-corpus":
            _make_corpus(args)
            return EXIT_OK
        if not args.config:
            raise pipeline.ConfigError(f"'{args.command}' needs --config")
        cfg = pipeline.load_config(args.config, {"seed": args.seed, "out": args.out})
        if args.command == "run":
            report = pipeline.run_all(cfg, force=args.force)
        else:
            result = pipeline.COMMANDS[args.command](pipeline.Run(cfg, force=args.force))
            report = result if isinstance(result, pipeline.RunReport) else None
        if report is not None:
            for metric, scope, value in report.rows():
                if scope == "average":
                    print(f"{metric:32s} {value:12.4f}")
        else:
            print(f"{args.command}: done ({Path(cfg.out) / ''})")
    except pipeline.ConfigError as exc:
        print(f"sonolab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.PrerequisiteError as exc:
        print(f"sonolab: prerequisite error: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
