"""Influential-vs-random augmentation curves on the synthetic two-domain problem.

Writes ``influential.csv`` and ``random.csv`` (columns n, seq, tok) under --out.
"""
import argparse
from pathlib import Path

from seq2logic.config import TrainConfig
from seq2logic.influence import HvpConfig, augment_and_sweep, random_selection, select_influential
from seq2logic.numcore import SeededRng
from seq2logic.synthetic import two_domain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--steps", default="0,10,20,40")
    ap.add_argument("--train-seeds", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dom = two_domain(args.seed, n_train=8, n_test=100)
    steps = [int(s) for s in args.steps.split(",")]
    size = max(steps)
    config = TrainConfig(d=16, emb=16, epochs=20, lr0=0.1, lr_decay=1.0)
    seeds = list(range(args.train_seeds))
    rng = SeededRng(args.seed)

    hvp = HvpConfig(repetitions=20, depth=500, top_k=size, sample_size=size)
    chosen = select_influential(dom.source, dom.target_train, hvp, rng.child("influence"),
                                target_test=dom.target_test).sampled
    rand = random_selection(len(dom.source), size, rng.child("random"))
    for name, picked in (("influential", chosen), ("random", rand)):
        useful = sum(dom.useful[i] for i in picked)
        print(f"{name}: {useful}/{len(picked)} selected pairs come from the target task")
        curve = augment_and_sweep(dom.target_train, dom.target_test, [dom.source[i] for i in picked], steps,
                                  config, out / f"{name}.csv", seeds=seeds)
        for n, seq, tok in curve:
            print(f"  n={n:3d}  SEQ {seq:.3f}  TOK {tok:.3f}")


if __name__ == "__main__":
    main()
