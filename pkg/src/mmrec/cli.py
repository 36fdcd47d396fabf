"""Subcommand entry point, run as ``python -m mmrec <command>``.

Exit status is 0 on success and 2 when an argument, config file or input
fails validation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench.config import ConfigError, ExperimentConfig, build, parse_key_values
from .bench.dataset import SyntheticDatasetSpec, generate_dataset
from .bench.experiment import evaluate, load_result, parse_grid, sweep_models, train_models
from .bench.report import parse_csv, render_csv, render_markdown, write_report
from .fusion import decision_fusion, detect

EXIT_INVALID = 2


def _spec(args) -> SyntheticDatasetSpec:
    values = parse_key_values(Path(args.config).read_text()) if args.config else {}
    values["seed"] = str(args.seed)
    if args.videos is not None:
        values["n_videos"] = str(args.videos)
    return build(SyntheticDatasetSpec, values)


def _config(args) -> ExperimentConfig:
    values = parse_key_values(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return build(ExperimentConfig, values)


def cmd_gen_data(args):
    out = generate_dataset(_spec(args), args.out)
    print(f"wrote dataset to {out}")


def cmd_train(args):
    out = train_models(args.data, args.out, _config(args))
    print(f"wrote models to {out}")


def cmd_eval(args):
    evaluate(args.data, args.models)
    for name, acc in load_result(args.models).accuracies.items():
        print(f"{name}: {acc:.2f}")


def cmd_sweep(args):
    for a, acc in sweep_models(args.models, parse_grid(args.grid)).items():
        print(f"alpha={a:g} accuracy={acc:.2f}")


def cmd_report(args):
    if args.result:
        curve = Path(args.curve).read_text() if args.curve else None
        result = parse_csv(Path(args.result).read_text(), curve)
        out = Path(args.out or Path(args.result).parent)
    else:
        result = load_result(args.models)
        out = Path(args.out or Path(args.models) / "report")
    write_report(result, out, args.format)
    sys.stdout.write(render_markdown(result) if args.format == "md" else render_csv(result))


def _prob(text):
    try:
        p = float(text)
    except ValueError:
        raise ConfigError(f"not a probability: {text!r}") from None
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"probability must lie in [0, 1]: {text}")
    return p


def cmd_fuse_decide(args):
    image = detect(_prob(args.image_prob), args.threshold)
    voice = detect(_prob(args.voice_prob), args.threshold)
    print(decision_fusion(image, voice).outcome.value)


def build_parser():
    p = argparse.ArgumentParser(prog="mmrec")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--videos", type=int)
    g.add_argument("--config", help="key=value file of dataset fields")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train RGB, skeleton, SVM and audio models")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key=value file of experiment fields")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score held-out videos and cache probabilities")
    e.add_argument("--data", required=True)
    e.add_argument("--models", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-alpha", help="alpha-fused accuracy over a grid")
    s.add_argument("--grid", default="0:1:0.1")
    s.add_argument("--models", default="models")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="write the accuracy table and alpha curve")
    r.add_argument("--format", choices=("csv", "md"), default="md")
    r.add_argument("--models", default="models")
    r.add_argument("--result", help="render a result CSV instead of a models directory")
    r.add_argument("--curve", help="alpha curve CSV to pair with --result")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_report)

    f = sub.add_parser("fuse-decide", help="image/voice mutual verification")
    f.add_argument("--image-prob", required=True)
    f.add_argument("--voice-prob", required=True)
    f.add_argument("--threshold", type=float, default=0.5)
    f.set_defaults(func=cmd_fuse_decide)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as e:  # ConfigError and ShapeError are ValueErrors
        print(f"mmrec {args.command}: {e}", file=sys.stderr)
        return EXIT_INVALID
    return 0
