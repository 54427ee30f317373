"""Command-line interface: ``tanmil <subcommand> [options]``.

Global options (``--config``, ``--seed``, ``--out-dir``, ``--preset``) are
accepted before or after the subcommand. On failure the last stderr line
is ``error: {json}`` with ``code``, ``stage`` and ``message`` keys, and the
exit status is nonzero.
"""

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .evaluate import emit_report, frame_level_roc, read_scores, read_truth
from .nncore import FormatError
from .pipeline import STAGES, PipelineError, run_all, run_stage

EXIT_PIPELINE = 1
EXIT_USAGE = 2


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed")
    p.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--preset", choices=("desk", "paper"), default=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="tanmil", parents=[common], description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "synthesize videos, flow files, manifests and truth",
        "train-tan": "train the flow autoencoder",
        "extract": "write one motion feature per clip",
        "build-bags": "average clip features into segment bags",
        "train-mil": "train the ranking model",
        "eval": "frame-level ROC/AUC report",
        "compare": "train and evaluate each MIL mode on the same bags",
        "run-all": "generate through eval",
    }
    cmds = {name: sub.add_parser(name, parents=[common], help=text) for name, text in helps.items()}
    tt = cmds["train-tan"]
    tt.add_argument("--data-dir", help="directory holding train.txt and flows/")
    tt.add_argument("--out", help="final checkpoint path")
    tt.add_argument("--steps", type=int, help="training steps")
    tm = cmds["train-mil"]
    tm.add_argument("--mode", choices=("attention", "max"))
    tm.add_argument("--lambda1", type=float)
    tm.add_argument("--segments", type=int)
    tm.add_argument("--steps", type=int)
    ev = cmds["eval"]
    ev.add_argument("--scores", help="frame score file; evaluates it without the pipeline")
    ev.add_argument("--truth", help="truth file to pair with --scores")
    return parser


def _overrides(args):
    pipe = {"seed": getattr(args, "seed", None), "out_dir": getattr(args, "out_dir", None),
            "preset": getattr(args, "preset", None)}
    out = {"pipeline": pipe}
    if args.command == "train-tan":
        out["tan"] = {"steps": args.steps}
    if args.command == "train-mil":
        out["mil"] = {"mode": args.mode, "lambda1": args.lambda1, "segments": args.segments, "steps": args.steps}
    return out


def _standalone_eval(args):
    if not args.truth:
        raise PipelineError("usage", "--scores requires --truth", "eval")
    scores = read_scores(args.scores)
    truth = read_truth(args.truth)
    missing = sorted(set(scores) - set(truth))
    if missing:
        raise PipelineError("bad-input", f"no truth for videos {missing[:5]}", "eval")
    curve = frame_level_roc(scores, {vid: truth[vid] for vid in scores})
    emit_report({"scores": curve}, getattr(args, "out_dir", None) or ".")
    return curve.auc


def _fail(code, message, stage=None, status=EXIT_PIPELINE):
    print("error: " + json.dumps({"code": code, "stage": stage, "message": message}, sort_keys=True),
          file=sys.stderr)
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        if args.command == "eval" and args.scores:
            result = _standalone_eval(args)
        else:
            config = load_config(getattr(args, "config", None), _overrides(args))
            if args.command == "run-all":
                result = run_all(config)
            else:
                options = {}
                if args.command == "train-tan":
                    options = {"data_dir": args.data_dir, "out": args.out}
                result = run_stage(args.command, config, **options)
    except ConfigError as exc:
        return _fail("config", str(exc), status=EXIT_USAGE)
    except PipelineError as exc:
        return _fail(exc.code, str(exc), exc.stage)
    except (FormatError, OSError, KeyError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), args.command if args.command in STAGES else None)
    if isinstance(result, dict):
        for name, auc in result.items():
            print(f"{name}\t{auc!r}")
    elif result is not None:
        print(f"auc\t{result!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
