"""The full parser: encoder, decoder LSTM, attention, copy and cache heads."""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .config import TrainConfig
from .data import BOS, Example, Vocabulary
from .decoder import (AttentionParams, CacheParams, JointDistribution, OutputParams, attend,
                      cache_scores, greedy_decode, joint_distribution, reset_gate, step_loss)
from .encoder import Encoder, LstmCell, encode, lstm_step
from .numcore import Tensor

CACHE_PARAMS = ("cache.W_h", "cache.U_zt", "cache.W_zt")


def param_shapes(config: TrainConfig, n_src: int, n_tgt: int) -> dict[str, tuple[int, ...]]:
    """Every parameter the configuration needs; cache params only when the cache is on."""
    d, e = config.d, config.emb
    shapes = {
        "src_emb": (n_src, e),
        "tgt_emb": (n_tgt, e),
        "enc_fwd.W": (4 * d, e + d),
        "enc_fwd.b": (4 * d,),
        "enc_bwd.W": (4 * d, e + d),
        "enc_bwd.b": (4 * d,),
        "init.W": (d, 4 * d),
        "init.b": (d,),
        "dec.W": (4 * d, e + d),
        "dec.b": (4 * d,),
        "attn.W_a": (d, 4 * d),
        "out.U_w": (5 * d, n_tgt),
    }
    if config.cache_fn != "off":
        shapes.update({
            "cache.W_h": (4 * d, n_src),
            "cache.U_zt": (d, n_src),
            "cache.W_zt": (4 * d, n_src),
        })
    return shapes


class Parser:
    """Sequence-to-logical-form model over fixed source/target vocabularies."""

    def __init__(self, config: TrainConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                 params: Mapping[str, Tensor]):
        self.config = config
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        expected = param_shapes(config, len(src_vocab), len(tgt_vocab))
        missing = set(expected) - set(params)
        if missing:
            raise ValueError(f"missing parameters {sorted(missing)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")
        # extra entries (e.g. cache params under cache_fn=off) are carried but unused
        self.params = dict(params)
        p = self.params
        self.encoder = Encoder(p["src_emb"], LstmCell(p["enc_fwd.W"], p["enc_fwd.b"]),
                               LstmCell(p["enc_bwd.W"], p["enc_bwd.b"]), p["init.W"], p["init.b"])
        self.dec_cell = LstmCell(p["dec.W"], p["dec.b"])
        self.attn = AttentionParams(p["attn.W_a"])
        self.output = OutputParams(p["out.U_w"])
        self.cache = None
        if config.cache_fn != "off":
            self.cache = CacheParams(p["cache.W_h"], p["cache.U_zt"], p["cache.W_zt"])
        self.last_decoder_inputs: list[int] = []

    @property
    def trainable(self) -> dict[str, Tensor]:
        names = param_shapes(self.config, len(self.src_vocab), len(self.tgt_vocab))
        return {n: self.params[n] for n in names}

    def encode(self, x: Sequence[int]):
        return encode(x, self.encoder)

    def step_from_input(self, state: tuple[Tensor, Tensor], inp: Tensor,
                        B: Tensor) -> tuple[tuple[Tensor, Tensor], JointDistribution]:
        h, c = lstm_step(self.dec_cell, inp, *state)
        scores, _, context = attend(h, B, self.attn)
        if self.cache is None:
            dist = joint_distribution(h, context, scores, None, None, self.output)
        else:
            kind = self.config.cache_fn
            z = reset_gate(h, context, self.cache)
            raw = cache_scores(h, context, z, kind, self.cache, self.attn)
            gate = z if (kind != "f6" or self.config.double_gate) else None
            dist = joint_distribution(h, context, scores, gate, raw, self.output)
        return (h, c), dist

    def step(self, state, prev: int, B: Tensor):
        return self.step_from_input(state, self.params["tgt_emb"][prev], B)

    def example_loss(self, example: Example) -> tuple[Tensor, int]:
        """Teacher-forced loss summed over target positions, plus the unreachable count."""
        B, state = self.encode(example.x)
        inputs = (BOS,) + example.y[:-1]
        self.last_decoder_inputs = list(inputs)
        rows = nc.getitem(self.params["tgt_emb"], np.asarray(inputs, dtype=np.int64))
        losses, unreachable = [], 0
        for j, gold in enumerate(example.target_surface):
            state, dist = self.step_from_input(state, rows[j], B)
            loss, ok = step_loss(dist, gold, example, j, self.src_vocab, self.tgt_vocab)
            losses.append(loss)
            unreachable += not ok
        return nc.sum(nc.stack(losses)), unreachable

    def distributions(self, example: Example) -> list[JointDistribution]:
        """Teacher-forced joint distributions, one per target position."""
        B, state = self.encode(example.x)
        out = []
        for prev in (BOS,) + example.y[:-1]:
            state, dist = self.step(state, prev, B)
            out.append(dist)
        return out

    def decode(self, src_tokens: Sequence[str], max_len: int | None = None) -> tuple[list[str], list[str]]:
        x = self.src_vocab.encode(src_tokens)
        B, s0 = self.encode(x)
        return greedy_decode(self.step, s0, B, src_tokens, self.src_vocab, self.tgt_vocab, BOS,
                             self.config.max_len if max_len is None else max_len)
