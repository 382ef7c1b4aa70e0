import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from seq2logic.config import TrainConfig
from seq2logic.data import BOS, Corpus
from seq2logic.evaluate import (TSV_COLUMNS, build_report, emit_report, evaluate, load_report,
                                sequence_accuracy, token_accuracy)
from seq2logic.training import build_parser


def test_sequence_accuracy_examples():
    golds = [["a", "b"], ["c"], ["d", "e"], ["f"]]
    assert sequence_accuracy(golds, golds) == 1.0
    assert sequence_accuracy([[]] * 4, golds) == 0.0
    assert sequence_accuracy([["a", "b"], ["x"], ["d", "e"], []], golds) == 0.5


def test_token_accuracy_examples():
    assert token_accuracy([["a", "b"]], [["a", "b"]]) == 1.0
    assert token_accuracy([["a", "b"]], [["a", "b", "c", "d"]]) == 0.5
    assert token_accuracy([["a", "b", "z", "z"]], [["a", "b"]]) == 1.0
    # micro-average: 1 of 1 plus 1 of 3 positions over 4 gold tokens
    assert token_accuracy([["x"], ["y", "q", "q"]], [["x"], ["y", "z", "w"]]) == pytest.approx(0.5)


def test_length_mismatch_is_an_error():
    with pytest.raises(ValueError):
        sequence_accuracy([["a"]], [["a"], ["b"]])
    with pytest.raises(ValueError):
        token_accuracy([], [["a"]])


seqs = st.lists(st.lists(st.sampled_from("abc"), min_size=1, max_size=5), min_size=1, max_size=8)


@given(seqs, st.data())
def test_metrics_are_permutation_invariant(golds, data):
    preds = data.draw(st.lists(st.lists(st.sampled_from("abc"), max_size=6), min_size=len(golds), max_size=len(golds)))
    perm = data.draw(st.permutations(range(len(golds))))
    p2, g2 = [preds[i] for i in perm], [golds[i] for i in perm]
    assert sequence_accuracy(preds, golds) == sequence_accuracy(p2, g2)
    assert token_accuracy(preds, golds) == pytest.approx(token_accuracy(p2, g2), abs=1e-15)
    assert token_accuracy(golds, golds) == 1.0
    assert 0 <= token_accuracy(preds, golds) <= 1


def test_single_example_report_has_one_row(tmp_path):
    report = build_report([["a", "b"]], [["x"]], [["x"]], [["copy"]], "TOY", "abc")
    files = emit_report(report, tmp_path)
    rows = files["examples"].read_text().splitlines()
    assert rows[0].split("\t") == list(TSV_COLUMNS)
    assert len(rows) == 2
    assert json.loads(files["metrics"].read_text()) == {"seq": 1.0, "tok": 1.0, "n": 1,
                                                        "config_hash": "abc", "corpus": "TOY"}
    assert "SEQ" in files["summary"].read_text()


def test_report_round_trip(tmp_path):
    report = build_report([["what", "?"], ["b"]], [["x", "y"], ["z"]], [["x", "q"], []],
                          [["write", "cache"], []], "GEOQUERY", "h")
    emit_report(report, tmp_path)
    assert load_report(tmp_path) == report


def test_unwritable_path_is_an_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(build_report([], [], [], []), blocker / "sub")


def test_cache_emitted_token_is_traced(tmp_path):
    pairs = [(("list", "papers", "by", "date"), ("(", "sort", "date", ")")),
             (("papers", "from", "venue"), ("(", "venue", ")"))]
    corpus = Corpus.from_pairs(pairs, "OVERNIGHT:publications")
    parser = build_parser(TrainConfig(d=4, emb=3, cache_fn="f4", seed=1), corpus.src_vocab, corpus.tgt_vocab)
    p = parser.params
    p["out.U_w"].values[:] = 0.0
    p["attn.W_a"].values[:] = 0.0
    p["cache.U_zt"].values[:] = 0.0
    B, s0 = parser.encode(corpus.examples[0].x)
    (h, _), _ = parser.step(s0, BOS, B)
    p["cache.U_zt"].values[:, corpus.src_vocab.lookup("date")] = 50.0 * h.values
    report = evaluate(parser, corpus.subset([0]))
    record = report.records[0]
    assert record.predicted[0] == "date" and record.trace[0] == "cache"
    assert len(record.trace) == len(record.predicted)
    assert set(record.trace) <= {"write", "copy", "cache"}
    emit_report(report, tmp_path)
    row = (tmp_path / "examples.tsv").read_text().splitlines()[1].split("\t")
    assert row[TSV_COLUMNS.index("trace")].split()[0] == "cache"
