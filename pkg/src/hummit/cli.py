"""``hummit`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (the error class name is
printed).  Every option may also come from ``--config FILE``, a flat
``key = value`` file whose keys are option names with dashes or
underscores; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HummitError

log = logging.getLogger("hummit")

COMMANDS = ("extract", "denoise", "dataset", "train", "evaluate", "query")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers


def write_atomic(path, data: bytes | str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value.strip("\"'")
    return values


def _apply_config(parser: argparse.ArgumentParser, config: dict[str, str]) -> None:
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in config.items():
        action = actions.get(key)
        if action is None or not action.option_strings:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"config key {key!r} needs a boolean, got {raw!r}")
            defaults[key] = raw.lower() in ("true", "1", "yes")
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key!r} must be one of {list(action.choices)}")
        defaults[key] = value
    parser.set_defaults(**defaults)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError("must be a positive number")
    return value


def _blas_limit(threads):
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


# ---------------------------------------------------------------------------
# configuration builders


def _pipeline_cfg(args):
    from .contour import SlopeConfig
    from .pipeline import PipelineConfig
    from .tvr import TvrConfig
    return PipelineConfig(tvr=TvrConfig(args.tv_lambda),
                          slope=SlopeConfig(args.slope_threshold, args.min_gap),
                          use_bundled_pitch=getattr(args, "use_bundled_pitch", False),
                          pv_frame_rate=args.pv_frame_rate)


def _dataset_cfg(args, augment: bool):
    from .dataset import DatasetConfig
    return DatasetConfig(window_s=args.window_s, hop_s=args.hop_s, frame_rate=args.frame_rate,
                         augment_with_denoised=augment, include_mtg=args.include_mtg,
                         seed=args.seed, validation_fraction=args.validation_fraction)


def _train_cfg(args):
    from .fcn import TrainConfig
    return TrainConfig(initial_lr=args.lr, constant_epochs=args.constant_epochs,
                       decay_factor=args.decay_factor, plateau_patience=args.patience,
                       plateau_delta=args.plateau_delta, batch_size=args.batch_size,
                       max_epochs=args.max_epochs, seed=args.seed, momentum=args.momentum)


def _load_catalog(args):
    from .corpus import merge_catalogs, scan_corpus
    catalog = scan_corpus(args.root, args.layout)
    if args.include_mtg:
        if not args.mtg_root:
            raise UsageError("--include-mtg needs --mtg-root")
        catalog = merge_catalogs(catalog, scan_corpus(args.mtg_root, "mtg-qbh"), "mtg:")
    for path, reason in catalog.skipped:
        log.warning("skipped %s: %s", path, reason)
    return catalog


# ---------------------------------------------------------------------------
# subcommands


def cmd_extract(args):
    from .contour import extract_melody
    from .corpus import read_wav
    from .pitch import PitchVector, estimate_f0, read_pitch_file

    if (args.wav is None) == (args.pitch_from_file is None):
        raise UsageError("give exactly one of a wav file or --pitch-from-file")
    cfg = _pipeline_cfg(args)
    if args.pitch_from_file:
        pv = read_pitch_file(args.pitch_from_file, args.pv_frame_rate)
    else:
        pv = estimate_f0(read_wav(args.wav), cfg.pitch)
    ext = extract_melody(pv, cfg.tvr, cfg.slope)
    doc = ext.contour.to_json()
    if args.dump_intermediate:
        doc["pitch"] = np.where(ext.raw.voiced, ext.raw.values, 0.0).tolist()
        doc["filled"] = ext.filled.values.tolist()
        doc["denoised"] = ext.denoised.tolist()
        doc["transitions"] = list(ext.transitions)
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def cmd_denoise(args):
    from .pitch import PitchVector, fill_unvoiced, format_pitch_values, read_pitch_file
    from .tvr import TvrConfig, denoise_tv

    pv = fill_unvoiced(read_pitch_file(args.pitch_file, args.pv_frame_rate))
    out = denoise_tv(pv.values, TvrConfig(args.tv_lambda))
    _emit(format_pitch_values(PitchVector(pv.frame_rate, out)), args.out)
    return 0


def cmd_dataset_build(args):
    from .dataset import build_dataset
    from .pipeline import extract_catalog

    catalog = _load_catalog(args)
    dcfg = _dataset_cfg(args, args.augment_tvr)
    contours = extract_catalog(catalog, _pipeline_cfg(args), dcfg.frame_rate, args.threads)
    data = build_dataset(catalog, contours, dcfg)
    write_atomic(args.out, data.to_bytes())
    log.info("%d frames, %d classes -> %s", len(data.frames), data.n_classes, args.out)
    return 0


def cmd_dataset_synth(args):
    from .synth import synthesize_corpus
    synthesize_corpus(args.out, args.songs, args.queries_per_song, args.seed)
    return 0


def cmd_train(args):
    from .dataset import LabeledDataset
    from .fcn import ArchSpec, save_model, train

    data = LabeledDataset.from_bytes(Path(args.dataset).read_bytes())
    arch = ArchSpec(args.arch, data.n_classes, data.frame_len, class_names=tuple(data.class_names))
    model, history = train(data, arch, _train_cfg(args))
    write_atomic(args.out, save_model(model))
    if args.history:
        write_atomic(args.history, json.dumps(history, indent=2) + "\n")
    return 0


def cmd_evaluate(args):
    from .dataset import LabeledDataset
    from .eval import AblationConfig, EvalReport, EvalRow, evaluate_model, run_ablation
    from .fcn import load_model

    if args.model:
        if not args.dataset:
            raise UsageError("--model needs --dataset")
        model = load_model(Path(args.model).read_bytes())
        data = LabeledDataset.from_bytes(Path(args.dataset).read_bytes())
        q_acc, f_acc, n_q = evaluate_model(model, data)
        report = EvalReport([EvalRow(model.arch.kind, q_acc, f_acc, n_q, data.n_classes, args.seed, 0)])
        if args.check:
            raise UsageError("--check needs the full ablation (--root)")
    else:
        if not args.root:
            raise UsageError("give --root for the ablation or --model with --dataset")
        catalog = _load_catalog(args)
        cfg = AblationConfig(pipeline=_pipeline_cfg(args), dataset=_dataset_cfg(args, False),
                             train=_train_cfg(args), threads=args.threads)
        report = run_ablation(catalog, cfg)
    _emit(report.to_json() if args.json else report.to_text(), args.out)
    if args.check:
        return 0 if report.check() else 1
    return 0


def cmd_query(args):
    from .fcn import load_model, predict_song
    from .pipeline import contours_from_extraction, extract_query, query_frames
    from .corpus import Query
    from .dataset import DatasetConfig

    model = load_model(Path(args.model).read_bytes())
    frame_rate = model.arch.input_len / args.window_s
    dcfg = DatasetConfig(window_s=args.window_s, hop_s=args.hop_s, frame_rate=frame_rate)
    query = Query("query", Path(args.wav), "", "query")
    contours = contours_from_extraction(extract_query(query, _pipeline_cfg(args)), frame_rate)
    ranked = predict_song(model, query_frames(contours.raw, dcfg))
    lines = [f"{rank}\t{name}\t{score:.6f}" for rank, (name, score) in enumerate(ranked[:10], 1)]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_pipeline_opts(p, with_pv=True):
    g = p.add_argument_group("melody extraction")
    g.add_argument("--tv-lambda", type=_positive_float, default=0.3,
                   help="TV fidelity weight (default 0.3)")
    g.add_argument("--slope-threshold", type=_positive_float, default=0.5,
                   help="minimum slope of a note transition, semitones (default 0.5)")
    g.add_argument("--min-gap", type=_positive_float, default=0.1,
                   help="minimum time between transitions, seconds (default 0.1)")
    if with_pv:
        g.add_argument("--pv-frame-rate", type=_positive_float, default=31.25,
                       help="frame rate of pitch-vector files (default 31.25)")


def _add_corpus_opts(p):
    from .corpus import LAYOUTS
    g = p.add_argument_group("corpus")
    g.add_argument("--root", help="corpus directory")
    g.add_argument("--layout", choices=LAYOUTS, default="mir-qbsh")
    g.add_argument("--include-mtg", action="store_true", help="append an MTG-QBH corpus")
    g.add_argument("--mtg-root", help="MTG-QBH directory for --include-mtg")
    g.add_argument("--use-bundled-pitch", action="store_true",
                   help="read .pv files next to the wavs instead of tracking pitch")
    g = p.add_argument_group("framing")
    g.add_argument("--frame-rate", type=_positive_float, default=100.0)
    g.add_argument("--window-s", type=_positive_float, default=5.0)
    g.add_argument("--hop-s", type=_positive_float, default=2.0)
    g.add_argument("--validation-fraction", type=float, default=0.25)


def _add_train_opts(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=_positive_float, default=0.005)
    g.add_argument("--constant-epochs", type=int, default=30)
    g.add_argument("--decay-factor", type=float, default=0.7)
    g.add_argument("--patience", type=_positive_int, default=5)
    g.add_argument("--plateau-delta", type=float, default=0.1,
                   help="accuracy points counted as improvement")
    g.add_argument("--batch-size", type=_positive_int, default=64)
    g.add_argument("--max-epochs", type=_positive_int, default=200)
    g.add_argument("--momentum", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker and BLAS thread cap (default: all cores)")
    common.add_argument("--config", help="key = value file of option defaults")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="hummit", description="Query-by-humming melody retrieval.")
    parser.add_argument("--version", action="version", version=f"hummit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}",
                                parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("extract", parents=[common], help="wav to note contour JSON")
    p.add_argument("wav", nargs="?")
    p.add_argument("--pitch-from-file", help="precomputed pitch vector (0 = unvoiced)")
    p.add_argument("--dump-intermediate", action="store_true",
                   help="include pitch, denoised signal and transitions")
    p.add_argument("--out", help="output file (default stdout)")
    _add_pipeline_opts(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("denoise", parents=[common], help="TV-denoise a pitch-vector file")
    p.add_argument("pitch_file")
    p.add_argument("--tv-lambda", type=_positive_float, default=0.3)
    p.add_argument("--pv-frame-rate", type=_positive_float, default=100.0)
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("dataset", help="build a training dataset or a synthetic corpus")
    dsub = p.add_subparsers(dest="action", metavar="{build,synth}", parser_class=_Parser)
    dsub.required = True
    b = dsub.add_parser("build", parents=[common], help="corpus to dataset cache file")
    b.add_argument("--out", required=True)
    b.add_argument("--augment-tvr", action="store_true",
                   help="append denoised frames of training queries")
    _add_corpus_opts(b)
    _add_pipeline_opts(b)
    b.set_defaults(func=cmd_dataset_build)
    s = dsub.add_parser("synth", parents=[common], help="write a synthetic hummed corpus")
    s.add_argument("--out", required=True, help="target directory")
    s.add_argument("--songs", type=_positive_int, default=10)
    s.add_argument("--queries-per-song", type=_positive_int, default=15)
    s.set_defaults(func=cmd_dataset_synth)

    p = sub.add_parser("train", parents=[common], help="train a classifier on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", choices=("fcn", "mlp"), default="fcn")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch records as JSON")
    _add_train_opts(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="with/without-TVR ablation report, or score one model")
    p.add_argument("--model")
    p.add_argument("--dataset")
    p.add_argument("--json", action="store_true", help="JSON instead of a text table")
    p.add_argument("--check", action="store_true",
                   help="exit 1 unless with-TVR accuracy >= without-TVR accuracy")
    p.add_argument("--out", help="output file (default stdout)")
    _add_corpus_opts(p)
    _add_pipeline_opts(p)
    _add_train_opts(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("query", parents=[common], help="rank songs for a hummed wav")
    p.add_argument("wav")
    p.add_argument("--model", required=True)
    p.add_argument("--window-s", type=_positive_float, default=5.0)
    p.add_argument("--hop-s", type=_positive_float, default=2.0)
    p.add_argument("--out", help="output file (default stdout)")
    _add_pipeline_opts(p)
    p.set_defaults(func=cmd_query)
    return parser


def _subparser(parser, argv):
    """The innermost subparser selected by ``argv`` (for config defaults)."""
    node = parser
    for tok in argv:
        action = next((a for a in node._actions if isinstance(a, argparse._SubParsersAction)), None)
        if action is None:
            break
        if tok in action.choices:
            node = action.choices[tok]
    return node


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(_subparser(parser, argv), read_config(args.config))
            args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        with _blas_limit(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"hummit: error: {exc}", file=sys.stderr)
        return 1
    except HummitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"hummit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
