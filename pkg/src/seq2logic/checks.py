"""Finite-difference checks of the full parser loss on a toy problem."""
from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .data import Corpus, Vocabulary
from .numcore import GradCheckReport, finite_diff_check
from .training import build_parser

# |V_s| = 7 and |V_t| = 5 once <unk>, <s>, </s> are counted; m = 3
TOY_SRC = Vocabulary.from_tokens(("<unk>", "<s>", "</s>", "a", "b", "c", "d"))
TOY_TGT = Vocabulary.from_tokens(("<unk>", "<s>", "</s>", "a", "x"))
# "a" is reachable by write, copy and cache; "x" only by write; "b" only by copy and cache
TOY_PAIR = (("a", "b", "d"), ("a", "x", "b"))


def toy_parser(cache_fn: str = "f1", seed: int = 0, d: int = 4, emb: int = 3, double_gate: bool = True):
    config = TrainConfig(d=d, emb=emb, seed=seed, cache_fn=cache_fn, double_gate=double_gate)
    corpus = Corpus.from_pairs([TOY_PAIR], "TOY", (TOY_SRC, TOY_TGT))
    return build_parser(config, TOY_SRC, TOY_TGT), corpus.examples[0]


def gradient_check(cache_fn: str = "f1", seed: int = 0, d: int = 4, emb: int = 3,
                   step: float = 1e-5, tol: float = 1e-3, max_entries: int | None = None) -> GradCheckReport:
    parser, example = toy_parser(cache_fn, seed, d, emb)
    return finite_diff_check(lambda: parser.example_loss(example)[0], parser.trainable, step, tol,
                             max_entries, np.random.default_rng(seed))
