"""Bidirectional LSTM encoder producing 4d-wide source annotations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import Tensor


@dataclass
class LstmCell:
    """Gate weights stacked as [input; forget; output; candidate] rows.

    ``W`` has shape (4d, x_dim + d) and multiplies ``[x; h_prev]``.
    """

    W: Tensor
    b: Tensor

    def __post_init__(self):
        rows, cols = self.W.shape
        if rows % 4 or self.b.shape != (rows,):
            raise ValueError(f"inconsistent LSTM shapes W={self.W.shape} b={self.b.shape}")
        if cols <= rows // 4:
            raise ValueError(f"W={self.W.shape} leaves no room for the input")

    @property
    def d(self) -> int:
        return self.W.shape[0] // 4

    @property
    def x_dim(self) -> int:
        return self.W.shape[1] - self.d


def lstm_step(cell: LstmCell, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    d = cell.d
    if x.shape != (cell.x_dim,) or h_prev.shape != (d,) or c_prev.shape != (d,):
        raise ValueError(
            f"LSTM step expects x ({cell.x_dim},), state ({d},); got {x.shape}, {h_prev.shape}, {c_prev.shape}")
    z = cell.W @ nc.concat([x, h_prev]) + cell.b
    gates = nc.sigmoid(z[: 3 * d])
    cand = nc.tanh(z[3 * d:])
    i, f, o = gates[:d], gates[d: 2 * d], gates[2 * d:]
    c = f * c_prev + i * cand
    h = o * nc.tanh(c)
    return h, c


@dataclass
class Encoder:
    emb: Tensor  # |V_s| x x_dim
    fwd: LstmCell
    bwd: LstmCell
    init_W: Tensor  # d x 4d
    init_b: Tensor  # d


def run_lstm(cell: LstmCell, inputs: Sequence[Tensor]) -> tuple[list[Tensor], list[Tensor]]:
    h = c = Tensor(np.zeros(cell.d))
    hs, cs = [], []
    for x in inputs:
        h, c = lstm_step(cell, x, h, c)
        hs.append(h)
        cs.append(c)
    return hs, cs


def encode(tokens: Sequence[int], enc: Encoder) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """Annotate each source position and derive the decoder's initial state.

    Returns the annotation matrix (row i is ``b_i`` = [fwd h; fwd c; bwd h;
    bwd c]) and ``(h0, c0)``.  ``h0`` is an affine map of the final forward and
    first backward states; ``c0`` is zero.
    """
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    d = enc.fwd.d
    rows = nc.getitem(enc.emb, np.asarray(tokens, dtype=np.int64))
    inputs = [rows[i] for i in range(len(tokens))]
    hf, cf = run_lstm(enc.fwd, inputs)
    hb, cb = run_lstm(enc.bwd, inputs[::-1])
    hb, cb = hb[::-1], cb[::-1]
    B = nc.concat([nc.stack(hf), nc.stack(cf), nc.stack(hb), nc.stack(cb)], axis=1)
    summary = nc.concat([hf[-1], cf[-1], hb[0], cb[0]])
    h0 = enc.init_W @ summary + enc.init_b
    return B, (h0, Tensor(np.zeros(d)))
