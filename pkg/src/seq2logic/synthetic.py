"""Toy corpora with known structure for pipeline checks."""
from __future__ import annotations

from dataclasses import dataclass

from .data import Pair
from .numcore import SeededRng

PEOPLE = ("alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
          "ivan", "judy", "mallory", "niaj", "olivia", "peggy", "rupert", "sybil")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


def _meeting(rng, people=PEOPLE, days=DAYS) -> Pair:
    kind = rng.integers(3)
    p, d = people[rng.integers(len(people))], days[rng.integers(len(days))]
    if kind == 0:
        src, tgt = f"show meetings with {p}", f"( list ( meeting ( attendee {p} ) ) )"
    elif kind == 1:
        src, tgt = f"show meetings on {d}", f"( list ( meeting ( date {d} ) ) )"
    else:
        src, tgt = (f"show meetings with {p} on {d}",
                    f"( list ( meeting ( attendee {p} ) ( date {d} ) ) )")
    return tuple(src.split()), tuple(tgt.split())


def _noise(rng) -> Pair:
    src = tuple(f"zq{rng.integers(40)}" for _ in range(rng.integers(3, 7)))
    tgt = ("(",) + tuple(f"op{rng.integers(30)}" for _ in range(rng.integers(2, 6))) + (")",)
    return src, tgt


@dataclass
class TwoDomain:
    target_train: list[Pair]
    target_test: list[Pair]
    source: list[Pair]
    useful: list[bool]


def two_domain(seed: int = 0, n_train: int = 6, n_test: int = 40, n_useful: int = 40,
               n_noise: int = 40) -> TwoDomain:
    """Target-domain meeting queries plus a source domain that mixes relabeled
    copies of the target task with unrelated noise pairs.  ``useful[i]``
    records which source pairs are target-task copies."""
    rng = SeededRng(seed).child("two-domain").generator()
    target_train = [_meeting(rng) for _ in range(n_train)]
    target_test = [_meeting(rng) for _ in range(n_test)]
    source = [_meeting(rng) for _ in range(n_useful)] + [_noise(rng) for _ in range(n_noise)]
    useful = [True] * n_useful + [False] * n_noise
    order = rng.permutation(len(source))
    return TwoDomain(target_train, target_test, [source[i] for i in order], [useful[i] for i in order])


def copy_task(seed: int = 0, n: int = 5, vocab: int = 12, length: int = 4) -> list[Pair]:
    rng = SeededRng(seed).child("copy-task").generator()
    words = [f"w{i}" for i in range(vocab)]
    pairs = []
    for _ in range(n):
        toks = tuple(words[i] for i in rng.choice(vocab, size=length, replace=False))
        pairs.append((toks, toks))
    return pairs
