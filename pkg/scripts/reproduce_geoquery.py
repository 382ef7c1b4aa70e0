"""Train copy-only and copy+cache (f1) parsers on the standard GeoQuery split.

Needs the full 880-pair corpus as a TSV (utterance<TAB>Prolog form):

    python scripts/reproduce_geoquery.py --data geoquery.tsv --seeds 0 1 2

Expect hours on one CPU core at the default d=200, 30 epochs.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from seq2logic.config import TrainConfig
from seq2logic.data import Corpus, load_mapping, preprocess_pairs, read_pairs, split_corpus
from seq2logic.evaluate import emit_report, evaluate
from seq2logic.training import train

PUBLISHED = {"off": (0.771, 0.883), "f1": (0.775, 0.901)}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", required=True)
    ap.add_argument("--mapping", help="predicate<TAB>word file; turns the run into GEOQUERY-S")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/geoquery")
    ap.add_argument("--epochs", type=int, default=30)
    args = ap.parse_args()

    mapping = load_mapping(args.mapping) if args.mapping else None
    tag = "GEOQUERY-S" if mapping else "GEOQUERY"
    corpus = Corpus.from_pairs(preprocess_pairs(read_pairs(args.data), mapping=mapping), tag)
    train_c, test_c = split_corpus(corpus, "standard:geoquery")
    results = {}
    for kind in ("off", "f1"):
        rows = []
        for seed in args.seeds:
            config = TrainConfig(cache_fn=kind, seed=seed, epochs=args.epochs)
            out = Path(args.out) / f"{kind}-seed{seed}"
            parser, _ = train(train_c, config, out_dir=out / "model")
            report = evaluate(parser, test_c)
            emit_report(report, out / "eval")
            rows.append((report.seq_accuracy, report.tok_accuracy))
            print(f"{kind} seed {seed}: SEQ {rows[-1][0]:.4f} TOK {rows[-1][1]:.4f}", flush=True)
        results[kind] = rows

    summary = {}
    for kind, rows in results.items():
        seq, tok = np.mean(rows, axis=0)
        ref_seq, ref_tok = PUBLISHED[kind]
        summary[kind] = {"seq": seq, "tok": tok, "seq_ok": abs(seq - ref_seq) <= 0.05,
                         "tok_ok": abs(tok - ref_tok) <= 0.03}
    wins = sum(c[1] >= o[1] for c, o in zip(results["f1"], results["off"]))
    summary["cache_tok_majority"] = wins * 2 > len(args.seeds)
    print(json.dumps(summary, indent=1))
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
