"""Command-line entry point: ``seq2logic <verb> [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .config import CACHE_CHOICES, TrainConfig, parse_overrides, read_config, write_config
from .data import (Corpus, load_mapping, parse_split_spec, preprocess_pairs, read_pairs, split_corpus,
                   write_pairs)
from .numcore import SeededRng

log = logging.getLogger("seq2logic")

RUN_ROOT_ENV = "SEQ2LOGIC_RUN_ROOT"
VERBS = ("preprocess", "train", "eval", "decode", "gradcheck", "influence", "sweep")


def _version_stamp() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"seq2logic {__version__}" + (f" (git {rev})" if rev else "")


def make_run_dir(args) -> Path:
    if args.run_dir:
        run = Path(args.run_dir)
    else:
        root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run = root / f"{stamp}-seed{args.seed}"
        n = 1
        while run.exists():
            run = root / f"{stamp}-seed{args.seed}-{n}"
            n += 1
    run.mkdir(parents=True, exist_ok=True)
    return run


def setup_logging(run: Path, verbose: bool) -> None:
    root = logging.getLogger()
    root.handlers.clear()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    fmt = logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s")
    fh = logging.FileHandler(run / "run.log", encoding="utf-8")
    fh.setFormatter(fmt)
    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(fh)
    root.addHandler(sh)


def resolve_config(args) -> TrainConfig:
    config = read_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for f in dataclasses.fields(TrainConfig):
        value = getattr(args, f"cfg_{f.name}", None)
        if value is not None:
            overrides[f.name] = value
    for item in args.set or []:
        key, _, value = item.partition("=")
        overrides.update(parse_overrides({key.strip(): value.strip()}))
    return dataclasses.replace(config, **overrides)


def _pairs(path, args):
    pairs = read_pairs(path)
    if getattr(args, "debruijn", False) or getattr(args, "mapping", None):
        mapping = load_mapping(args.mapping) if args.mapping else None
        pairs = preprocess_pairs(pairs, args.debruijn, mapping, args.strip_first)
    return pairs


def _load_train_test(args):
    if args.train and args.data:
        raise SystemExit("use either --train/--test or --data/--split")
    if args.data:
        corpus = Corpus.from_pairs(_pairs(args.data, args), args.tag)
        return split_corpus(corpus, parse_split_spec(args.split))
    if not args.train:
        raise SystemExit("--train or --data is required")
    train = Corpus.from_pairs(_pairs(args.train, args), args.tag)
    test = None
    if args.test:
        test = Corpus.from_pairs(_pairs(args.test, args), args.tag, (train.src_vocab, train.tgt_vocab))
    return train, test


# -------------------------------------------------------------------- verbs


def cmd_preprocess(args, run: Path, config: TrainConfig) -> int:
    mapping = load_mapping(args.mapping) if args.mapping else None
    pairs = preprocess_pairs(read_pairs(args.input), args.debruijn, mapping, args.strip_first)
    out = run / "preprocessed.tsv"
    write_pairs(pairs, out)
    log.info("wrote %d pairs to %s", len(pairs), out)
    return 0


def cmd_train(args, run: Path, config: TrainConfig) -> int:
    from .evaluate import emit_report, evaluate
    from .training import train

    train_corpus, test_corpus = _load_train_test(args)
    model_dir = run / "model"
    parser, report = train(train_corpus, config, out_dir=model_dir)
    with open(run / "train_log.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tlr\tloss\tunreachable\n")
        for e, (lr, loss, miss) in enumerate(zip(report.learning_rate, report.epoch_loss, report.unreachable)):
            fh.write(f"{e}\t{lr!r}\t{loss!r}\t{miss}\n")
    log.info("trained in %.1fs; checkpoint %s", report.wall_time, report.checkpoint)
    if test_corpus is not None:
        metrics = evaluate(parser, test_corpus)
        emit_report(metrics, run / "eval")
        log.info("test SEQ %.4f TOK %.4f (n=%d)", metrics.seq_accuracy, metrics.tok_accuracy, metrics.n)
    return 0


def cmd_eval(args, run: Path, config: TrainConfig) -> int:
    from .evaluate import emit_report, evaluate
    from .training import load_model

    parser = load_model(args.model, args.checkpoint)
    corpus = Corpus.from_pairs(_pairs(args.data, args), args.tag, (parser.src_vocab, parser.tgt_vocab))
    report = evaluate(parser, corpus)
    emit_report(report, run / "eval")
    print(json.dumps(report.metrics(), sort_keys=True))
    return 0


def cmd_decode(args, run: Path, config: TrainConfig) -> int:
    from .training import load_model

    parser = load_model(args.model, args.checkpoint)
    source = open(args.input, encoding="utf-8") if args.input else sys.stdin
    with source, open(run / "decoded.tsv", "w", encoding="utf-8") as out:
        for line in source:
            utterance = line.split("\t")[0].split()
            if not utterance:
                continue
            tokens, trace = parser.decode(utterance)
            row = f"{' '.join(utterance)}\t{' '.join(tokens)}\t{' '.join(trace)}"
            print(row)
            out.write(row + "\n")
    return 0


def cmd_gradcheck(args, run: Path, config: TrainConfig) -> int:
    from .checks import gradient_check

    ok = True
    for seed in range(args.seeds):
        report = gradient_check(config.cache_fn, config.seed + seed, d=config.d, emb=config.emb,
                                step=args.step, tol=args.tol, max_entries=args.max_entries)
        print(f"# cache_fn={config.cache_fn} seed={config.seed + seed} d={config.d}")
        print(report.table())
        ok &= report.passed
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def _hvp_config(args):
    from .influence import HvpConfig

    return HvpConfig(repetitions=args.reps, depth=args.depth, damping=args.damping, scale=args.scale,
                     chains=args.chains, sample_size=args.sample, top_k=args.top_k, hvp=args.hvp)


def cmd_influence(args, run: Path, config: TrainConfig) -> int:
    from .influence import select_influential

    source, target = _pairs(args.source, args), _pairs(args.target, args)
    target_test = _pairs(args.target_test, args) if args.target_test else None
    sel = select_influential(source, target, _hvp_config(args), SeededRng(config.seed).child("influence"),
                             target_test, lam=args.lam)
    with open(run / "influence.jsonl", "w", encoding="utf-8") as fh:
        for s in sel.scores:
            fh.write(json.dumps({"id": s.example_id, "score": s.score, "count": s.count}) + "\n")
    (run / "sampled.txt").write_text("\n".join(f"b{i}" for i in sel.sampled) + "\n", encoding="utf-8")
    write_pairs([source[i] for i in sel.sampled], run / "sampled.tsv")
    log.info("sampled %d of %d source examples", len(sel.sampled), len(source))
    return 0


def cmd_sweep(args, run: Path, config: TrainConfig) -> int:
    from .influence import augment_and_sweep, random_selection, select_influential

    source = _pairs(args.source, args)
    target = _pairs(args.target, args)
    if args.target_test:
        target_train, target_test = target, _pairs(args.target_test, args)
    else:
        tr, te = split_corpus(Corpus.from_pairs(target), parse_split_spec(args.split))
        target_train, target_test = tr.pairs, te.pairs
    rng = SeededRng(config.seed)
    if args.selection == "random":
        picked = random_selection(len(source), args.sample, rng.child("random"))
    else:
        picked = select_influential(source, target_train, _hvp_config(args), rng.child("influence"),
                                    target_test, lam=args.lam).sampled
    steps = [int(s) for s in args.steps.split(",") if s.strip()]
    seeds = [config.seed + i for i in range(args.train_seeds)]
    curve = augment_and_sweep(target_train, target_test, [source[i] for i in picked], steps, config,
                              run / "curve.csv", seeds=seeds)
    for n, seq, tok in curve:
        print(f"{n}\t{seq:.4f}\t{tok:.4f}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval, "decode": cmd_decode,
    "gradcheck": cmd_gradcheck, "influence": cmd_influence, "sweep": cmd_sweep,
}


# ------------------------------------------------------------------- parser


def _bool(text: str) -> bool:
    low = text.lower()
    if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
        raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")
    return low in ("1", "true", "yes", "on")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model/training config (override the config file)")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = {"int": int, "float": float}.get(f.type)
        if f.type == "bool":
            g.add_argument(flag, dest=f"cfg_{f.name}", type=_bool, metavar="BOOL", help=f"default {f.default}")
        elif f.name == "cache_fn":
            g.add_argument(flag, dest=f"cfg_{f.name}", choices=CACHE_CHOICES, help=f"default {f.default}")
        elif f.name == "seed":
            continue
        else:
            g.add_argument(flag, dest=f"cfg_{f.name}", type=kind, help=f"default {f.default}")
    g.add_argument("--seed", dest="cfg_seed", type=int, help="RNG seed (default 0)")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="generic config override")


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--debruijn", action="store_true", help="standardize variables by first occurrence")
    p.add_argument("--mapping", help="predicate<TAB>word file for GEOQUERY-S stripping")
    p.add_argument("--strip-first", action="store_true", help="strip before variable standardization")


def _add_influence_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reps", type=int, default=1000, help="inverse-HVP repetitions")
    p.add_argument("--sample", type=int, default=100, help="examples to sample")
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--hvp", choices=("exact", "stochastic"), default="stochastic")
    p.add_argument("--depth", type=int, default=1000, help="recursion depth per estimate")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--damping", type=float, default=0.0)
    p.add_argument("--lam", type=float, default=1e-2, help="classifier L2 strength")


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seq2logic", description=__doc__)
    ap.add_argument("--version", action="version", version=_version_stamp())
    sub = ap.add_subparsers(dest="verb", required=True, metavar="{" + ",".join(VERBS) + "}")

    def verb(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--run-dir", help=f"output directory (default ${RUN_ROOT_ENV}/<time>-seed<N>)")
        p.add_argument("--tag", default="GEOQUERY", help="corpus provenance tag")
        p.add_argument("-v", "--verbose", action="store_true")
        _add_config_flags(p)
        return p

    p = verb("preprocess", "standardize variables / strip logic tokens")
    p.add_argument("--input", required=True)
    _add_preprocess_flags(p)

    p = verb("train", "train a parser")
    p.add_argument("--train", help="training TSV")
    p.add_argument("--test", help="test TSV (evaluated after training)")
    p.add_argument("--data", help="single TSV to split with --split")
    p.add_argument("--split", default="standard:geoquery", help="standard:geoquery | frac:0.8,seed:13")
    _add_preprocess_flags(p)

    for name, help_ in (("eval", "score a trained model"), ("decode", "decode utterances")):
        p = verb(name, help_)
        p.add_argument("--model", required=True, help="model directory (model.json + checkpoints)")
        p.add_argument("--checkpoint", default="final.ckpt")
        if name == "eval":
            p.add_argument("--data", required=True)
            _add_preprocess_flags(p)
        else:
            p.add_argument("--input", help="utterances, one per line (default stdin)")

    p = verb("gradcheck", "finite-difference check of the full loss on a toy problem")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-entries", type=int, default=None)
    p.set_defaults(cfg_d=4, cfg_emb=3)

    p = verb("influence", "rank and sample source examples by influence")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--target-test")
    _add_influence_flags(p)
    _add_preprocess_flags(p)

    p = verb("sweep", "augmentation-size curve")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--target-test")
    p.add_argument("--split", default="frac:0.8,seed:13", help="target split when --target-test is absent")
    p.add_argument("--steps", required=True, help="comma-separated augmentation sizes")
    p.add_argument("--selection", choices=("influential", "random"), default="influential")
    p.add_argument("--train-seeds", type=int, default=1, help="parser seeds averaged per point")
    _add_influence_flags(p)
    _add_preprocess_flags(p)
    return ap


def main(argv=None) -> int:
    ap = build_arg_parser()
    args = ap.parse_args(argv)
    try:
        config = resolve_config(args)
    except (KeyError, ValueError, OSError) as exc:
        ap.error(str(exc))
    args.seed = config.seed
    run = make_run_dir(args)
    setup_logging(run, args.verbose)
    log.info("%s", _version_stamp())
    log.info("command: %s", " ".join(sys.argv[1:] if argv is None else argv))
    log.info("config: %s", json.dumps(config.to_dict(), sort_keys=True))
    write_config(config, run / "config.cfg")
    try:
        return COMMANDS[args.verb](args, run, config)
    except SystemExit:
        raise
    except Exception as exc:  # module failure -> exit 1 with a diagnostic
        log.error("%s failed: %s: %s", args.verb, type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
