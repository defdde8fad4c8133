"""Command-line driver.

Every subcommand reads the engine configuration from ``--config`` (a UTF-8
``key = value`` file) and then applies command-line overrides; the generic
``--set KEY=VALUE`` flag reaches any configuration key.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, SdvadError

log = logging.getLogger("sdvad")


def _merge_pair(text: str) -> tuple[int, int]:
    try:
        gap, speech = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN_GAP,MIN_SPEECH, got {text!r}") from None
    return gap, speech


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--workdir", help="artifact root (corpus, models, hypotheses)")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", dest="overrides", action="append", default=[], type=_key_value,
                   metavar="KEY=VALUE", help="override any configuration key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--model-type", choices=("lstm", "mlp"))
    p.add_argument("--bin", type=int, metavar="N", help="feature binning size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)


def _post_flags(p: argparse.ArgumentParser):
    p.add_argument("--smooth", type=int, metavar="W", help="majority-vote window in frames")
    p.add_argument("--merge", type=_merge_pair, metavar="MIN_GAP,MIN_SPEECH",
                   help="fill gaps shorter than MIN_GAP, then drop speech shorter than MIN_SPEECH")
    p.add_argument("--theta", type=float, help="speech posterior threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdvad", description="Speaker-dependent voice activity detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="synthesize speakers, utterances and conversations")
    _common(p)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-dev", type=int)
    p.add_argument("--n-test", type=int)

    for name, text in (("train-ubm", "train the universal background model"),
                       ("train-tv", "train the total variability matrix"),
                       ("train-plda", "train the PLDA back end")):
        _common(sub.add_parser(name, help=text))

    for name, text in (("train-vad", "train the speaker-independent VAD"),
                       ("train-sdvad", "train the speaker-dependent VAD")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _model_flags(p)

    p = sub.add_parser("infer", help="decode a split with the speaker-dependent model")
    _common(p)
    p.add_argument("--model-type", choices=("lstm", "mlp"))
    p.add_argument("--bin", type=int, metavar="N")
    _post_flags(p)
    p.add_argument("--stream", action="store_true", help="decode frame by frame and report the latency")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="hypothesis label file")

    p = sub.add_parser("baseline", help="two-stage VAD + speaker verification")
    _common(p)
    p.add_argument("--model-type", choices=("lstm", "mlp"))
    _post_flags(p)
    p.add_argument("--split", default="test")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="score hypothesis label files")
    _common(p)
    p.add_argument("hyps", nargs="+", metavar="[NAME=]PATH", help="hypothesis label files")
    p.add_argument("--split", default="test")
    p.add_argument("--label", choices=("target", "speech"), default="target")
    p.add_argument("--tol", type=int, help="boundary tolerance in frames")
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("run-all", help="every stage plus a comparison report")
    _common(p)
    p.add_argument("--bin", type=int, default=4, metavar="N", help="binning size of the binned system")
    p.add_argument("--split", default="test")
    return parser


_FLAG_KEYS = {
    "workdir": "workdir", "seed": "seed", "model_type": "model_type", "bin": "bin", "epochs": "epochs",
    "learning_rate": "learning_rate", "smooth": "smooth", "theta": "theta", "tol": "tol",
    "n_train": "n_train", "n_dev": "n_dev", "n_test": "n_test",
}


def config_from_args(args):
    overrides = dict(args.overrides)
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None and not (args.command == "run-all" and attr == "bin"):
            overrides[key] = value
    if args.command == "train-vad" and getattr(args, "epochs", None) is not None:
        overrides["vad_epochs"] = overrides.pop("epochs")
    if getattr(args, "merge", None) is not None:
        overrides["min_gap"], overrides["min_speech"] = args.merge
    return load_config(args.config, overrides)


def _hyp_files(items):
    out = {}
    for item in items:
        name, path = item.split("=", 1) if "=" in item else (item.rsplit("/", 1)[-1], item)
        if name in out:
            raise ConfigError(f"duplicate system name {name!r}")
        out[name] = path
    return out


def _summary(report: dict) -> str:
    lines = [f"{'system':<28} {'ACC':>7} {'F1':>7} {'SBA':>7} {'EBA':>7} {'BP':>7} {'J_VAD':>7}"]
    for row in report["comparison"]:
        lines.append(f"{row['system']:<28} " + " ".join(f"{row[k]:7.4f}" for k in
                                                        ("acc", "f1", "sba", "eba", "bp", "jvad")))
    return "\n".join(lines)


def run(args) -> int:
    cfg = config_from_args(args)
    cmd = args.command
    if cmd == "synth-corpus":
        ds = pipeline.run_synth_corpus(cfg)
        print(f"wrote {len(ds.utterances)} utterances and "
              f"{sum(len(v) for v in ds.manifests.values())} conversations to {ds.root}")
    elif cmd == "train-ubm":
        pipeline.run_train_ubm(cfg)
        print(f"wrote {cfg.model_path('ubm')}")
    elif cmd == "train-tv":
        pipeline.run_train_tv(cfg)
        print(f"wrote {cfg.model_path('tv')}")
    elif cmd == "train-plda":
        pipeline.run_train_plda(cfg)
        print(f"wrote {cfg.model_path('plda')}")
    elif cmd == "train-vad":
        pipeline.run_train_vad(cfg)
        print(f"wrote {cfg.model_path(pipeline.vad_name(cfg))}")
    elif cmd == "train-sdvad":
        pipeline.run_train_sdvad(cfg)
        print(f"wrote {cfg.model_path(pipeline.sdvad_name(cfg))}")
    elif cmd == "infer":
        if args.stream:
            print(f"streaming latency: {pipeline.stream_latency(cfg)} frames")
        out = pipeline.run_infer(cfg, args.split, stream=args.stream, out_path=args.out)
        print(f"wrote {out}")
    elif cmd == "baseline":
        out = pipeline.run_baseline(cfg, args.split, out_path=args.out)
        print(f"wrote {out}")
    elif cmd == "eval":
        report = pipeline.run_eval(cfg, _hyp_files(args.hyps), args.split, args.out, args.label)
        print(_summary(report))
        bad = {name: r["errors"] for name, r in report["systems"].items() if r["errors"]}
        if bad:
            print("skipped utterances: " + json.dumps(bad), file=sys.stderr)
    elif cmd == "run-all":
        report = pipeline.run_all(cfg, args.bin, args.split)
        print(_summary(report))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return run(args)
    except SdvadError as exc:
        print(f"sdvad {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"sdvad {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
