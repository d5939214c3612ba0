"""Command-line entry point: ``deepcrf {pretrain,train,predict,eval,gradcheck,synth}``.

Exit codes: 0 success, 1 check failure, 2 config error, 3 data error,
4 model/data mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, TrainConfig, load_config
from .core import Dataset, LabelAlphabet, split_folds
from .dataio import (DataFormatError, ModelFormatError, SyntheticHmmSpec, _atomic_write,
                     gen_synthetic, load_generic, load_model, read_generic_records, read_ocr,
                     save_generic, save_model)
from .trainer import cross_validate, evaluate, decode, frame_error, init_model, train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_MISMATCH = 0, 1, 2, 3, 4

OCR_REFERENCE = "published OCR reference (10-fold): 0.63% with pretraining, 1.56% without"

log = logging.getLogger("deepcrf")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_dataset(path, fmt, alphabet: LabelAlphabet | None = None):
    try:
        if fmt == "ocr":
            return read_ocr(path)
        return load_generic(path, alphabet), None
    except FileNotFoundError:
        raise CliError(EXIT_DATA, "data file not found: %s" % path)
    except KeyError as exc:
        raise CliError(EXIT_MISMATCH, str(exc))
    except (DataFormatError, ValueError) as exc:
        if alphabet is not None and "not in the alphabet" in str(exc):
            raise CliError(EXIT_MISMATCH, "label outside the model alphabet: %s" % exc)
        raise CliError(EXIT_DATA, "data error: %s" % exc)


def _resolve_config(args) -> TrainConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(EXIT_CONFIG, "--set expects key=value, got %r" % item)
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = str(args.epochs)
    if getattr(args, "no_rbm", False):
        overrides["use_rbm"] = "false"
    if getattr(args, "no_independent", False):
        overrides["use_independent"] = "false"
    if getattr(args, "seed", None) is not None and getattr(args, "command", "") in ("train", "pretrain"):
        overrides["seed"] = str(args.seed)
    try:
        if args.config:
            return load_config(args.config, overrides)
        return TrainConfig.from_mapping(overrides)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, "config file not found: %s" % args.config)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, "config error: %s" % exc)


def _load_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(EXIT_DATA, "model file not found: %s" % path)
    except ModelFormatError as exc:
        raise CliError(EXIT_MISMATCH, "model error: %s" % exc)


def _check_compatible(model, dataset):
    try:
        model.check_compatible(dataset)
    except ValueError as exc:
        raise CliError(EXIT_MISMATCH, "model/data mismatch: %s" % exc)


# -- commands ----------------------------------------------------------------

def _run_training(args, pretrain_only=False) -> int:
    config = _resolve_config(args)
    if pretrain_only:
        config = config.replace(epochs=0)
    started = time.time()
    dataset, _ = _load_dataset(args.data, args.format)
    loaded = time.time()
    if config.use_rbm or config.use_independent or config.epochs:
        result = train(dataset, config)
        model, train_log = result.model, result.log
    else:
        model, train_log = init_model(dataset, config), None
    trained = time.time()

    out = Path(args.out)
    save_model(model, out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    _atomic_write(log_path, (train_log.to_jsonl() if train_log else "").encode("utf-8"))
    manifest = {
        "command": "pretrain" if pretrain_only else "train",
        "config": config.to_dict(),
        "inputs": {"data": {"path": str(args.data), "format": args.format,
                            "sha256": _sha256(args.data)}},
        "seeds": {"seed": config.seed},
        "artifacts": {"model": str(out), "train_log": str(log_path)},
        "timings": {"load_s": round(loaded - started, 3), "train_s": round(trained - loaded, 3)},
    }
    if args.format == "ocr":
        manifest["reference"] = OCR_REFERENCE
    if args.config:
        manifest["inputs"]["config"] = {"path": str(args.config), "sha256": _sha256(args.config)}
    manifest_path = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    _atomic_write(manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    if train_log and train_log.records:
        last = train_log.records[-1]
        print("epochs %d  train_error %.6f  violations %d" % (len(train_log), last.train_error, last.violations))
    if args.format == "ocr":
        print(OCR_REFERENCE)
    print("wrote %s" % out)
    return EXIT_OK


def cmd_train(args) -> int:
    return _run_training(args)


def cmd_pretrain(args) -> int:
    return _run_training(args, pretrain_only=True)


def cmd_eval(args) -> int:
    if args.folds:
        if args.config:
            config = _resolve_config(args)
        elif args.model:
            config = _load_model(args.model).config
        else:
            config = _resolve_config(args)
        dataset, file_folds = _load_dataset(args.data, args.format)
        folds = file_folds if args.file_folds and file_folds is not None else None
        try:
            if folds is None:
                folds = split_folds(dataset, args.folds, args.seed)
            result = cross_validate(dataset, folds.k, config, args.seed, folds=folds)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
        print("%-6s %10s %10s" % ("fold", "frames", "error"))
        for k, err in enumerate(result.fold_errors):
            n = sum(s.T for s in dataset if folds.assignment[s.id] == k)
            print("%-6d %10d %10.6f" % (k, n, err))
        print("%-6s %10d %10.6f" % ("mean", dataset.n_frames, result.mean))
    else:
        if not args.model:
            raise CliError(EXIT_CONFIG, "eval needs --model (or --folds to cross-validate)")
        model = _load_model(args.model)
        dataset, _ = _load_dataset(args.data, args.format,
                                   model.alphabet if args.format == "generic" else None)
        _check_compatible(model, dataset)
        err, _ = evaluate(dataset, model)
        print("%.6f" % err)
    if args.format == "ocr":
        print(OCR_REFERENCE)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    if args.format == "ocr":
        dataset, _ = _load_dataset(args.data, "ocr")
        _check_compatible(model, dataset)
        ids = [s.id for s in dataset]
        frames = [s.frames for s in dataset]
        gold = [s.labels for s in dataset]
    else:
        try:
            records = read_generic_records(args.data)
        except FileNotFoundError:
            raise CliError(EXIT_DATA, "data file not found: %s" % args.data)
        except DataFormatError as exc:
            raise CliError(EXIT_DATA, "data error: %s" % exc)
        ids = [r["id"] for r in records]
        frames = [r["frames"] for r in records]
        if frames[0].shape[1] != model.omega.d:
            raise CliError(EXIT_MISMATCH, "data has d=%d, model expects d=%d"
                           % (frames[0].shape[1], model.omega.d))
        gold = None
        if all(r["labels"] is not None for r in records):
            try:
                gold = [model.alphabet.encode(r["labels"]) for r in records]
            except KeyError as exc:
                raise CliError(EXIT_MISMATCH, "label outside the model alphabet: %s" % exc.args[0])

    from .core import LabeledSequence
    placeholder = [np.zeros(len(f), dtype=np.int64) for f in frames]
    seqs = tuple(LabeledSequence(f, y, i) for f, y, i in zip(frames, gold or placeholder, ids))
    dataset = Dataset(seqs, model.alphabet, model.omega.d)
    decoded = decode(dataset, model)
    lines = "".join(json.dumps({"id": i, "labels": model.alphabet.decode(p)}) + "\n"
                    for i, p in zip(ids, decoded))
    if args.out:
        _atomic_write(args.out, lines.encode("utf-8"))
    else:
        sys.stdout.write(lines)
    if gold is not None:
        print("frame_error %.6f" % frame_error(dataset, decoded), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import GROUPS, TOLERANCE, run_gradcheck

    if args.seeds < 1:
        raise CliError(EXIT_CONFIG, "--seeds must be >= 1")
    if args.break_sign is not None and args.break_sign not in GROUPS:
        raise CliError(EXIT_CONFIG, "--break-sign group must be one of %s" % ", ".join(GROUPS))
    report = run_gradcheck(seeds=range(args.seeds), break_sign=args.break_sign)
    print(report.table())
    failed = report.failures()
    if failed:
        print("gradient check failed for: %s (tolerance %.0e)" % (", ".join(failed), TOLERANCE))
        return EXIT_CHECK
    print("all groups within %.0e" % TOLERANCE)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SyntheticHmmSpec(K=args.k, d=args.d, transition_strength=args.strength,
                                emission_noise=args.noise, N=args.n,
                                T_range=(args.tmin, args.tmax), seed=args.seed)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, "invalid generator spec: %s" % exc)
    dataset, params = gen_synthetic(spec)
    save_generic(dataset, args.out)
    print("wrote %s: N=%d frames=%d K=%d d=%d strength=%g noise=%g seed=%d"
          % (args.out, dataset.N, dataset.n_frames, spec.K, spec.d,
             spec.transition_strength, spec.emission_noise, spec.seed))
    return EXIT_OK


# -- parser ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_CONFIG, "%s: error: %s" % (self.prog, message))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepcrf", description="Deep-feature CRF sequence labeling.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, required=True):
        sp.add_argument("--data", required=required, help="dataset path")
        sp.add_argument("--format", choices=("ocr", "generic"), default="generic")

    def config_args(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    for name, fn, help_ in (("train", cmd_train, "run the full training pipeline"),
                            ("pretrain", cmd_pretrain, "RBM and independent stages only")):
        sp = sub.add_parser(name, help=help_)
        data_args(sp)
        config_args(sp)
        sp.add_argument("--out", required=True, help="model file to write")
        sp.add_argument("--log", help="train log path (default: OUT.log.jsonl)")
        sp.add_argument("--manifest", help="run manifest path (default: OUT.manifest.json)")
        sp.add_argument("--no-rbm", action="store_true")
        sp.add_argument("--no-independent", action="store_true")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("eval", help="frame error of a model, or k-fold cross-validation")
    data_args(sp)
    config_args(sp)
    sp.add_argument("--model")
    sp.add_argument("--folds", type=int, help="cross-validate with this many folds")
    sp.add_argument("--seed", type=int, default=0, help="fold split seed")
    sp.add_argument("--file-folds", action="store_true", help="use the OCR file's own fold column")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="decode label sequences")
    data_args(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", help="output records path (default: stdout)")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--break-sign", nargs="?", const="b", default=None, metavar="GROUP",
                    help="negate one gradient group (harness self-test)")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("synth", help="write a synthetic Markov-chain dataset")
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--d", type=int, default=6)
    sp.add_argument("--strength", type=float, default=0.9)
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--tmin", type=int, default=8)
    sp.add_argument("--tmax", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        return args.func(args)
    except CliError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
