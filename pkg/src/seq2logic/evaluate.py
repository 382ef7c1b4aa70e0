"""Sequence/token accuracy and on-disk experiment reports."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .data import Corpus

TSV_COLUMNS = ("source", "gold", "predicted", "seq_match", "tok_matches", "trace")


def _check_lengths(predictions, golds):
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold sequences")


def sequence_accuracy(predictions: Sequence[Sequence[str]], golds: Sequence[Sequence[str]]) -> float:
    _check_lengths(predictions, golds)
    if not golds:
        return 0.0
    return sum(list(p) == list(g) for p, g in zip(predictions, golds)) / len(golds)


def token_matches(pred: Sequence[str], gold: Sequence[str]) -> int:
    return sum(a == b for a, b in zip(pred, gold))


def token_accuracy(predictions: Sequence[Sequence[str]], golds: Sequence[Sequence[str]]) -> float:
    """Positional matches over the shared prefix length, micro-averaged by gold length."""
    _check_lengths(predictions, golds)
    total = sum(len(g) for g in golds)
    if total == 0:
        return 0.0
    return sum(token_matches(p, g) for p, g in zip(predictions, golds)) / total


@dataclass
class ExampleRecord:
    source: list[str]
    gold: list[str]
    predicted: list[str]
    trace: list[str]
    seq_match: bool
    tok_matches: int


@dataclass
class MetricReport:
    seq_accuracy: float
    tok_accuracy: float
    records: list[ExampleRecord] = field(default_factory=list)
    corpus: str = ""
    config_hash: str = ""

    @property
    def n(self) -> int:
        return len(self.records)

    def metrics(self) -> dict:
        return {"seq": self.seq_accuracy, "tok": self.tok_accuracy, "n": self.n,
                "config_hash": self.config_hash, "corpus": self.corpus}


def build_report(sources, golds, predictions, traces, corpus: str = "", config_hash: str = "") -> MetricReport:
    records = [
        ExampleRecord(list(s), list(g), list(p), list(t), list(p) == list(g), token_matches(p, g))
        for s, g, p, t in zip(sources, golds, predictions, traces)
    ]
    return MetricReport(sequence_accuracy(predictions, golds), token_accuracy(predictions, golds),
                        records, corpus, config_hash)


def evaluate(parser, corpus: Corpus, max_len: int | None = None) -> MetricReport:
    sources, golds, preds, traces = [], [], [], []
    for ex in corpus:
        tokens, trace = parser.decode(ex.src_tokens, max_len)
        sources.append(ex.src_tokens)
        golds.append(ex.tgt_tokens)
        preds.append(tokens)
        traces.append(trace)
    return build_report(sources, golds, preds, traces, corpus.tag, parser.config.config_hash())


def emit_report(report: MetricReport, path) -> dict[str, Path]:
    """Write ``summary.txt``, ``metrics.json`` and ``examples.tsv`` under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {"summary": out / "summary.txt", "metrics": out / "metrics.json", "examples": out / "examples.tsv"}
    files["metrics"].write_text(json.dumps(report.metrics(), sort_keys=True) + "\n", encoding="utf-8")
    files["summary"].write_text(
        f"corpus      {report.corpus or '-'}\n"
        f"examples    {report.n}\n"
        f"SEQ         {report.seq_accuracy:.4f}\n"
        f"TOK         {report.tok_accuracy:.4f}\n"
        f"config hash {report.config_hash or '-'}\n",
        encoding="utf-8",
    )
    with open(files["examples"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
        writer.writerow(TSV_COLUMNS)
        for r in report.records:
            writer.writerow([" ".join(r.source), " ".join(r.gold), " ".join(r.predicted),
                             int(r.seq_match), r.tok_matches, " ".join(r.trace)])
    return files


def load_report(path) -> MetricReport:
    out = Path(path)
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    records = []
    with open(out / "examples.tsv", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar="\\")
        header = next(reader)
        if tuple(header) != TSV_COLUMNS:
            raise ValueError(f"unexpected examples.tsv header {header}")
        for row in reader:
            src, gold, pred, seq, tok, trace = row
            records.append(ExampleRecord(src.split(), gold.split(), pred.split(), trace.split(),
                                         bool(int(seq)), int(tok)))
    return MetricReport(metrics["seq"], metrics["tok"], records, metrics.get("corpus", ""),
                        metrics.get("config_hash", ""))


def report_to_dict(report: MetricReport) -> dict:
    return asdict(report)
