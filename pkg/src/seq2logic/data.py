"""Corpus loading, vocabularies, GeoQuery preprocessing and copy annotation."""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numcore import SeededRng

log = logging.getLogger(__name__)

UNK, BOS, EOS = 0, 1, 2
UNK_TOKEN, BOS_TOKEN, EOS_TOKEN = "<unk>", "<s>", "</s>"
RESERVED = (UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
MAX_TARGET_LEN = 100

Pair = tuple[tuple[str, ...], tuple[str, ...]]


class CorpusFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Token/index bijection with ``<unk>``, ``<s>``, ``</s>`` pinned at 0, 1, 2."""

    tokens: tuple[str, ...]
    index: Mapping[str, int] = field(compare=False, repr=False)

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]]) -> "Vocabulary":
        counts = Counter(tok for seq in sequences for tok in seq if tok not in RESERVED)
        ordered = sorted(counts, key=lambda t: (-counts[t], t))
        return cls.from_tokens(RESERVED + tuple(ordered))

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        tokens = tuple(tokens)
        if tokens[:3] != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        index = {t: i for i, t in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("duplicate vocabulary entries")
        return cls(tokens, index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.index.get(t, UNK) for t in tokens)

    def token(self, i: int) -> str:
        return self.tokens[i]


@dataclass(frozen=True)
class Example:
    """One utterance/logical-form pair.

    ``y`` ends with EOS; ``copy_matrix[j, i]`` is true when the j-th target
    surface token equals the i-th source token.
    """

    src_tokens: tuple[str, ...]
    tgt_tokens: tuple[str, ...]
    x: tuple[int, ...]
    y: tuple[int, ...]
    copy_matrix: np.ndarray = field(compare=False, repr=False)
    domain: str | None = None

    @property
    def target_surface(self) -> tuple[str, ...]:
        return self.tgt_tokens + (EOS_TOKEN,)

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (self.src_tokens, self.tgt_tokens, self.x, self.y, self.domain) == (
            other.src_tokens, other.tgt_tokens, other.x, other.y, other.domain
        ) and np.array_equal(self.copy_matrix, other.copy_matrix)

    __hash__ = None


def annotate_copies(example: Example) -> Example:
    surface = example.target_surface
    src = np.array(example.src_tokens, dtype=object)
    matrix = np.zeros((len(surface), len(src)), dtype=bool)
    for j, tok in enumerate(surface):
        matrix[j] = src == tok
    return replace(example, copy_matrix=matrix)


def make_example(src: Sequence[str], tgt: Sequence[str], src_vocab: Vocabulary,
                 tgt_vocab: Vocabulary, domain: str | None = None) -> Example:
    src, tgt = tuple(src), tuple(tgt)
    if not src:
        raise ValueError("empty source sequence")
    if len(tgt) + 1 > MAX_TARGET_LEN:
        raise ValueError(f"target of {len(tgt) + 1} tokens exceeds the {MAX_TARGET_LEN}-token cap")
    ex = Example(src, tgt, src_vocab.encode(src), tgt_vocab.encode(tgt) + (EOS,),
                 np.zeros((len(tgt) + 1, len(src)), dtype=bool), domain)
    return annotate_copies(ex)


@dataclass(frozen=True)
class Corpus:
    examples: tuple[Example, ...]
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    tag: str = "GEOQUERY"

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def pairs(self) -> list[Pair]:
        return [(ex.src_tokens, ex.tgt_tokens) for ex in self.examples]

    @classmethod
    def from_pairs(cls, pairs: Sequence[Pair], tag: str = "GEOQUERY",
                   vocabs: tuple[Vocabulary, Vocabulary] | None = None) -> "Corpus":
        """Index ``pairs``; vocabularies come from ``pairs`` unless given."""
        if vocabs is None:
            vocabs = (Vocabulary.build(s for s, _ in pairs), Vocabulary.build(t for _, t in pairs))
        src_vocab, tgt_vocab = vocabs
        examples = tuple(make_example(s, t, src_vocab, tgt_vocab, tag) for s, t in pairs)
        return cls(examples, src_vocab, tgt_vocab, tag)

    def reindexed(self, vocabs: tuple[Vocabulary, Vocabulary]) -> "Corpus":
        return Corpus.from_pairs(self.pairs, self.tag, vocabs)

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(tuple(self.examples[i] for i in indices), self.src_vocab, self.tgt_vocab, self.tag)


# ------------------------------------------------------------------- loading


def read_pairs(path) -> list[Pair]:
    """Parse ``utterance<TAB>logical form`` lines into token tuples."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise CorpusFormatError(f"{path}: empty corpus file")
    pairs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.count("\t") != 1:
            raise CorpusFormatError(f"{path}:{lineno}: expected exactly one tab separator")
        src, tgt = line.split("\t")
        src_toks, tgt_toks = tuple(src.split()), tuple(tgt.split())
        if not src_toks:
            raise CorpusFormatError(f"{path}:{lineno}: empty utterance")
        if not tgt_toks:
            raise CorpusFormatError(f"{path}:{lineno}: empty logical form")
        pairs.append((src_toks, tgt_toks))
    return pairs


def load_corpus(path, tag: str = "GEOQUERY",
                vocabs: tuple[Vocabulary, Vocabulary] | None = None) -> Corpus:
    return Corpus.from_pairs(read_pairs(path), tag, vocabs)


def write_pairs(pairs: Iterable[Pair], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in pairs:
            fh.write(" ".join(src) + "\t" + " ".join(tgt) + "\n")


# -------------------------------------------------------------- preprocessing

_VARIABLE = re.compile(r"^[A-Z]$")


def debruijn_standardize(tokens: Sequence[str]) -> tuple[str, ...]:
    """Rename single-capital variables to v0, v1, ... by first occurrence."""
    names: dict[str, str] = {}
    out = []
    for tok in tokens:
        if _VARIABLE.match(tok):
            if tok not in names:
                names[tok] = f"v{len(names)}"
            tok = names[tok]
        out.append(tok)
    return tuple(out)


def load_mapping(path) -> dict[str, str]:
    mapping = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        if line.count("\t") != 1:
            raise CorpusFormatError(f"{path}:{lineno}: expected 'predicate<TAB>word'")
        key, word = line.split("\t")
        mapping[key.strip()] = word.strip()
    return mapping


def strip_logic_tokens(tokens: Sequence[str], mapping: Mapping[str, str]) -> tuple[str, ...]:
    """Replace mapped predicates by words; drop underscores from the rest.

    A mapped word containing spaces expands to several tokens; a token that
    is nothing but underscores disappears.
    """
    out: list[str] = []
    for tok in tokens:
        if tok in mapping:
            out.extend(mapping[tok].split())
        elif "_" in tok:
            log.debug("no mapping for %r; removing underscores", tok)
            bare = tok.replace("_", "")
            if bare:
                out.append(bare)
        else:
            out.append(tok)
    return tuple(out)


def preprocess_pairs(pairs: Iterable[Pair], debruijn: bool = True,
                     mapping: Mapping[str, str] | None = None,
                     strip_first: bool = False) -> list[Pair]:
    """Apply variable standardization and (optionally) GEOQUERY-S stripping to targets."""
    out = []
    for src, tgt in pairs:
        steps = []
        if debruijn:
            steps.append(debruijn_standardize)
        if mapping is not None:
            strip = lambda t: strip_logic_tokens(t, mapping)  # noqa: E731
            steps.insert(0, strip) if strip_first else steps.append(strip)
        for step in steps:
            tgt = step(tgt)
        out.append((tuple(src), tuple(tgt)))
    return out


# ------------------------------------------------------------------ splitting

GEOQUERY_STANDARD = (680, 200)


@dataclass(frozen=True)
class SplitSpec:
    kind: str  # "standard" | "frac"
    name: str = "geoquery"
    fraction: float = 0.8
    seed: int = 13


def parse_split_spec(text: str) -> SplitSpec:
    """Parse ``standard:geoquery`` or ``frac:0.8,seed:13``."""
    if text.startswith("standard:"):
        name = text.split(":", 1)[1]
        if name != "geoquery":
            raise ValueError(f"unknown standard split {name!r}")
        return SplitSpec("standard", name)
    fields = dict(part.split(":", 1) for part in text.split(","))
    if "frac" not in fields:
        raise ValueError(f"bad split spec {text!r}")
    frac = float(fields["frac"])
    if not 0.0 <= frac <= 1.0:
        raise ValueError(f"split fraction {frac} outside [0, 1]")
    return SplitSpec("frac", fraction=frac, seed=int(fields.get("seed", 13)))


def split_corpus(corpus: Corpus, spec: SplitSpec | str) -> tuple[Corpus, Corpus]:
    """Partition ``corpus``; both halves are re-indexed with train-only vocabularies."""
    if isinstance(spec, str):
        spec = parse_split_spec(spec)
    n = len(corpus)
    if spec.kind == "standard":
        n_train, n_test = GEOQUERY_STANDARD
        if n_train + n_test > n:
            raise ValueError(f"standard split needs {n_train + n_test} examples, corpus has {n}")
        train_idx, test_idx = range(n_train), range(n_train, n_train + n_test)
    else:
        order = SeededRng(spec.seed, 0).generator().permutation(n)
        cut = int(round(spec.fraction * n))
        train_idx, test_idx = sorted(order[:cut]), sorted(order[cut:])
    pairs = corpus.pairs
    train_pairs = [pairs[i] for i in train_idx]
    test_pairs = [pairs[i] for i in test_idx]
    vocabs = (Vocabulary.build(s for s, _ in train_pairs), Vocabulary.build(t for _, t in train_pairs))
    return (Corpus.from_pairs(train_pairs, corpus.tag, vocabs),
            Corpus.from_pairs(test_pairs, corpus.tag, vocabs))
