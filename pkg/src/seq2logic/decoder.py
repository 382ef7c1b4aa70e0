"""Decoder step: one softmax over target writes, source copies and cached source vocabulary.

Per step the order is fixed: bilinear attention scores and the context
vector come first, then the reset gate, then the cache scores.  Attention
weights never see cache terms (the scores are per position, the cache is
per source-vocabulary entry).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .data import EOS_TOKEN, Example, Vocabulary, UNK
from .numcore import Tensor

CACHE_KINDS = ("f1", "f2", "f3", "f4", "f5", "f6")
SEGMENTS = ("write", "copy", "cache")


@dataclass
class AttentionParams:
    W_a: Tensor  # d x 4d


@dataclass
class CacheParams:
    W_h: Tensor  # 4d x |V_s|
    U_zt: Tensor  # d x |V_s|
    W_zt: Tensor  # 4d x |V_s|


@dataclass
class OutputParams:
    U_w: Tensor  # (d + 4d) x |V_t|


def attend(s: Tensor, B: Tensor, attn: AttentionParams) -> tuple[Tensor, Tensor, Tensor]:
    """Bilinear scores ``s^T W_a b_i``, their softmax, and the context vector."""
    if B.shape[0] == 0:
        raise ValueError("attention over zero annotations")
    scores = B @ (s @ attn.W_a)
    alpha = nc.softmax_t(scores)
    context = alpha @ B
    return scores, alpha, context


def reset_gate(s: Tensor, c: Tensor, cache: CacheParams) -> Tensor:
    return nc.sigmoid(s @ cache.U_zt + c @ cache.W_zt)


def cache_scores(s: Tensor, c: Tensor, z: Tensor | None, kind: str,
                 cache: CacheParams, attn: AttentionParams) -> Tensor:
    """Raw cache function value, one score per source-vocabulary entry."""
    if kind == "f1":
        return (s @ attn.W_a) @ cache.W_h
    if kind == "f2":
        return nc.sigmoid((s @ attn.W_a) @ cache.W_h)
    if kind == "f3":
        return nc.sigmoid((s @ attn.W_a) @ cache.W_h + c @ cache.W_h)
    if kind == "f4":
        return nc.sigmoid(s @ cache.U_zt)
    if kind == "f5":
        return nc.tanh(s @ cache.U_zt)
    if kind == "f6":
        if z is None:
            raise ValueError("cache function f6 needs the reset gate z_t")
        local = nc.sigmoid((s @ attn.W_a) @ cache.W_h)
        context = nc.sigmoid(c @ cache.W_h)
        return z * local + (1.0 - z) * context
    raise ValueError(f"unknown cache function {kind!r}")


@dataclass
class JointDistribution:
    """Logits over [target vocab | source positions | source vocab]."""

    logits: Tensor
    n_write: int
    n_copy: int
    n_cache: int

    @property
    def probs(self) -> np.ndarray:
        return nc.softmax(self.logits.values)

    def segment(self, k: int) -> tuple[str, int]:
        if k < self.n_write:
            return "write", k
        k -= self.n_write
        if k < self.n_copy:
            return "copy", k
        k -= self.n_copy
        if k < self.n_cache:
            return "cache", k
        raise IndexError(k)

    def resolve(self, k: int, src_tokens: Sequence[str], src_vocab: Vocabulary,
                tgt_vocab: Vocabulary) -> tuple[str, str]:
        seg, i = self.segment(k)
        if seg == "write":
            return tgt_vocab.token(i), seg
        if seg == "copy":
            return src_tokens[i], seg
        return src_vocab.token(i), seg

    def gold_indices(self, gold: str, copy_row: np.ndarray, src_vocab: Vocabulary,
                     tgt_vocab: Vocabulary) -> list[int]:
        """Every concatenated index that resolves to the surface token ``gold``."""
        idx = []
        w = tgt_vocab.index.get(gold)
        if w is not None and w != UNK:
            idx.append(w)
        idx.extend(self.n_write + int(i) for i in np.flatnonzero(copy_row))
        if self.n_cache:
            v = src_vocab.index.get(gold)
            if v is not None and v != UNK:
                idx.append(self.n_write + self.n_copy + v)
        return idx


def joint_distribution(s: Tensor, c: Tensor, copy_logits: Tensor, z: Tensor | None,
                       cache_raw: Tensor | None, output: OutputParams) -> JointDistribution:
    """Concatenate write, copy and (gated) cache logits under one softmax.

    ``cache_raw=None`` drops the cache segment; ``z=None`` leaves it ungated.
    """
    write = nc.concat([s, c]) @ output.U_w
    parts = [write, copy_logits]
    n_cache = 0
    if cache_raw is not None:
        parts.append(cache_raw if z is None else z * cache_raw)
        n_cache = cache_raw.shape[0]
    return JointDistribution(nc.concat(parts), write.shape[0], copy_logits.shape[0], n_cache)


def step_loss(dist: JointDistribution, gold: str, example: Example, j: int,
              src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> tuple[Tensor, bool]:
    """Negative log of the total mass on entries resolving to ``gold``.

    Returns ``(loss, reachable)``; an unreachable gold token is scored against
    the write-UNK entry.
    """
    idx = dist.gold_indices(gold, example.copy_matrix[j], src_vocab, tgt_vocab)
    reachable = bool(idx)
    if not reachable:
        idx = [UNK]
    logp = nc.log_softmax(dist.logits)
    picked = nc.getitem(logp, np.asarray(idx, dtype=np.int64))
    return -nc.logsumexp(picked), reachable


StepFn = Callable[[tuple[Tensor, Tensor], int, Tensor], tuple[tuple[Tensor, Tensor], JointDistribution]]


def greedy_decode(step: StepFn, s0: tuple[Tensor, Tensor], B: Tensor, src_tokens: Sequence[str],
                  src_vocab: Vocabulary, tgt_vocab: Vocabulary, bos: int,
                  max_len: int = 100) -> tuple[list[str], list[str]]:
    """Argmax decoding with lowest-index tie breaking.

    ``step(state, prev_target_index, B)`` advances the decoder.  Returns the
    emitted tokens (EOS excluded) and the segment each came from.
    """
    state, prev = s0, bos
    tokens, trace = [], []
    for _ in range(max_len):
        state, dist = step(state, prev, B)
        k = int(np.argmax(dist.logits.values))
        token, seg = dist.resolve(k, src_tokens, src_vocab, tgt_vocab)
        if token == EOS_TOKEN:
            break
        tokens.append(token)
        trace.append(seg)
        prev = tgt_vocab.lookup(token)
    return tokens, trace
