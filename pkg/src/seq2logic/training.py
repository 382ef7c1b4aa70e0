"""Per-example SGD training with an epoch-wise learning-rate schedule."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .config import TrainConfig
from .data import Corpus, Vocabulary
from .model import Parser, param_shapes
from .numcore import SeededRng, Tensor

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainReport:
    epoch_loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    unreachable: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint: str | None = None


def init_params(config: TrainConfig, shapes: dict[str, tuple[int, ...]],
                rng: SeededRng | None = None) -> dict[str, Tensor]:
    """Uniform ``[-init_scale, init_scale]`` draws, one independent stream per parameter name.

    Per-name streams keep shared parameters identical whether or not the
    cache parameters exist.
    """
    rng = rng or SeededRng(config.seed)
    s = config.init_scale
    return {name: nc.parameter(rng.child(name).generator().uniform(-s, s, size=shape), name=name)
            for name, shape in shapes.items()}


def build_parser(config: TrainConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Parser:
    shapes = param_shapes(config, len(src_vocab), len(tgt_vocab))
    return Parser(config, src_vocab, tgt_vocab, init_params(config, shapes))


def clip_gradients(params, threshold: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params))
    if threshold > 0 and norm > threshold:
        scale = threshold / norm
        for p in params:
            p.grad *= scale
    return norm


def sgd_step(parser: Parser, example, lr: float, clip: float) -> tuple[float, int]:
    params = list(parser.trainable.values())
    with nc.Tape() as tape:
        loss, unreachable = parser.example_loss(example)
    value = loss.item()
    if not math.isfinite(value):
        return value, unreachable
    nc.backward(tape, loss, params)
    clip_gradients(params, clip)
    for p in params:
        p.values -= lr * p.grad
        p.grad = None
    return value, unreachable


def train(corpus: Corpus, config: TrainConfig, out_dir=None, parser: Parser | None = None,
          on_epoch=None) -> tuple[Parser, TrainReport]:
    """Train for ``config.epochs`` passes over a seeded shuffle of ``corpus``.

    With ``out_dir`` set, ``epoch-NN.ckpt`` is written after every epoch and
    ``final.ckpt`` at the end, next to ``model.json``.
    """
    if len(corpus) == 0:
        raise TrainingError("cannot train on an empty corpus")
    parser = parser or build_parser(config, corpus.src_vocab, corpus.tgt_vocab)
    shuffle = SeededRng(config.seed).child("shuffle")
    report = TrainReport()
    start = time.perf_counter()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_model_meta(parser, out_dir)
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        order = shuffle.child(epoch).generator().permutation(len(corpus))
        total, unreachable = 0.0, 0
        for i in order:
            value, missed = sgd_step(parser, corpus.examples[i], lr, config.clip)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss on example {int(i)} in epoch {epoch}")
            total += value
            unreachable += missed
        report.epoch_loss.append(total / len(corpus))
        report.learning_rate.append(lr)
        report.unreachable.append(unreachable)
        log.info("epoch %02d lr=%r loss=%r", epoch, lr, report.epoch_loss[-1])
        if out_dir is not None:
            nc.save_checkpoint(out_dir / f"epoch-{epoch:02d}.ckpt", parser.trainable)
        if on_epoch is not None:
            on_epoch(epoch, report)
    report.wall_time = time.perf_counter() - start
    if out_dir is not None:
        final = out_dir / "final.ckpt"
        nc.save_checkpoint(final, parser.trainable)
        report.checkpoint = str(final)
    return parser, report


def write_model_meta(parser: Parser, out_dir) -> None:
    meta = {
        "config": parser.config.to_dict(),
        "src_vocab": list(parser.src_vocab.tokens),
        "tgt_vocab": list(parser.tgt_vocab.tokens),
    }
    Path(out_dir, "model.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def save_model(parser: Parser, out_dir, name: str = "final.ckpt") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_model_meta(parser, out_dir)
    nc.save_checkpoint(out_dir / name, parser.trainable)
    return out_dir / name


def load_model(model_dir, name: str = "final.ckpt") -> Parser:
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "model.json").read_text(encoding="utf-8"))
    config = TrainConfig(**meta["config"])
    src_vocab = Vocabulary.from_tokens(meta["src_vocab"])
    tgt_vocab = Vocabulary.from_tokens(meta["tgt_vocab"])
    shapes = param_shapes(config, len(src_vocab), len(tgt_vocab))
    arrays = nc.load_checkpoint(model_dir / name, shapes)
    params = {n: nc.parameter(arrays[n], name=n) for n in shapes}
    return Parser(config, src_vocab, tgt_vocab, params)
