import math

import numpy as np
import pytest

from seq2logic import numcore as nc
from seq2logic.encoder import Encoder, LstmCell, encode, lstm_step
from seq2logic.numcore import Tensor


def make_cell(rng, d, x_dim, scale=0.5):
    return LstmCell(nc.parameter(rng.uniform(-scale, scale, (4 * d, x_dim + d))),
                    nc.parameter(rng.uniform(-scale, scale, 4 * d)))


def make_encoder(rng, vocab=6, x_dim=3, d=2, tied=False):
    fwd = make_cell(rng, d, x_dim)
    bwd = LstmCell(fwd.W, fwd.b) if tied else make_cell(rng, d, x_dim)
    return Encoder(nc.parameter(rng.normal(size=(vocab, x_dim))), fwd, bwd,
                   nc.parameter(rng.normal(size=(d, 4 * d))), nc.parameter(rng.normal(size=d)))


def test_zero_weights_give_zero_state():
    cell = LstmCell(Tensor(np.zeros((8, 5))), Tensor(np.zeros(8)))
    h, c = lstm_step(cell, Tensor(np.array([3.0, -1.0, 2.0])), Tensor(np.zeros(2)), Tensor(np.zeros(2)))
    assert np.array_equal(h.values, np.zeros(2))
    assert np.array_equal(c.values, np.zeros(2))


def test_saturated_gates_scalar_oracle():
    # d = 1, x_dim = 1; rows are [input, forget, output, candidate]
    W = np.zeros((4, 2))
    W[3, 0] = 1.0  # candidate pre-activation = x
    b = np.array([50.0, 50.0, 50.0, 0.0])
    c_prev = 0.3
    h, c = lstm_step(LstmCell(Tensor(W), Tensor(b)), Tensor(np.array([1.0])),
                     Tensor(np.array([0.7])), Tensor(np.array([c_prev])))
    c_oracle = c_prev + math.tanh(1.0)
    assert c.values[0] == pytest.approx(c_oracle, abs=1e-12)
    assert h.values[0] == pytest.approx(math.tanh(c_oracle), abs=1e-12)


def test_lstm_step_against_numpy_oracle():
    rng = np.random.default_rng(1)
    cell = make_cell(rng, 3, 2)
    x, h0, c0 = rng.normal(size=2), rng.normal(size=3), rng.normal(size=3)
    z = cell.W.values @ np.concatenate([x, h0]) + cell.b.values
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, o, g = sig(z[:3]), sig(z[3:6]), sig(z[6:9]), np.tanh(z[9:])
    c_ref = f * c0 + i * g
    h, c = lstm_step(cell, Tensor(x), Tensor(h0), Tensor(c0))
    assert np.allclose(c.values, c_ref, atol=1e-14)
    assert np.allclose(h.values, o * np.tanh(c_ref), atol=1e-14)


def test_lstm_step_rejects_bad_dimensions():
    cell = make_cell(np.random.default_rng(0), 2, 3)
    with pytest.raises(ValueError, match="expects"):
        lstm_step(cell, Tensor(np.zeros(4)), Tensor(np.zeros(2)), Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        LstmCell(Tensor(np.zeros((7, 5))), Tensor(np.zeros(7)))


@pytest.mark.parametrize("seed", range(3))
def test_lstm_step_gradients(seed):
    rng = np.random.default_rng(seed)
    cell = make_cell(rng, 2, 3)
    x = nc.parameter(rng.normal(size=3))
    h0, c0 = Tensor(rng.normal(size=2)), Tensor(rng.normal(size=2))
    readout = rng.normal(size=2)

    def f():
        h, c = lstm_step(cell, x, h0, c0)
        return nc.sum(h * readout) + nc.sum(c * c)

    report = nc.finite_diff_check(f, {"W": cell.W, "b": cell.b, "x": x}, tol=1e-3)
    assert report.passed, report.table()


def test_single_token_gives_one_annotation():
    enc = make_encoder(np.random.default_rng(0), d=3)
    B, (h0, c0) = encode([4], enc)
    assert B.shape == (1, 12)
    assert h0.shape == (3,) and np.array_equal(c0.values, np.zeros(3))


def test_shapes_match_token_count():
    enc = make_encoder(np.random.default_rng(0), d=2)
    B, _ = encode([1, 2, 3, 4, 5], enc)
    assert B.shape == (5, 8)


def test_empty_sequence_is_an_error():
    with pytest.raises(ValueError, match="empty"):
        encode([], make_encoder(np.random.default_rng(0)))


def test_tied_reversal_symmetry():
    enc = make_encoder(np.random.default_rng(4), d=3, tied=True)
    tokens = [0, 3, 5, 1, 3]
    B = encode(tokens, enc)[0].values
    R = encode(tokens[::-1], enc)[0].values
    m, d = len(tokens), 3
    for i in range(m):
        swapped = np.concatenate([R[m - 1 - i, 2 * d:], R[m - 1 - i, :2 * d]])
        assert np.allclose(B[i], swapped, atol=1e-14)


def test_annotation_halves_follow_their_direction():
    enc = make_encoder(np.random.default_rng(5), d=2)
    tokens = [1, 2, 3, 4]
    B = encode(tokens, enc)[0].values
    # forward half at the last position equals a fresh forward pass; backward half at 0 likewise
    h = c = Tensor(np.zeros(2))
    for t in tokens:
        h, c = lstm_step(enc.fwd, Tensor(enc.emb.values[t]), h, c)
    assert np.array_equal(B[-1, :4], np.concatenate([h.values, c.values]))


def test_locality_under_perturbation():
    enc = make_encoder(np.random.default_rng(6), d=2)
    base = [1, 2, 3, 4, 5]
    B = encode(base, enc)[0].values
    changed_tail = encode([1, 2, 0, 0, 0], enc)[0].values
    assert np.array_equal(B[:2, :4], changed_tail[:2, :4])
    assert not np.allclose(B[2:, :4], changed_tail[2:, :4])
    changed_head = encode([0, 0, 3, 4, 5], enc)[0].values
    assert np.array_equal(B[2:, 4:], changed_head[2:, 4:])


def test_gradient_of_annotation_readout():
    rng = np.random.default_rng(7)
    enc = make_encoder(rng, d=2)
    weights = rng.normal(size=(4, 8))
    params = {"emb": enc.emb, "fwd.W": enc.fwd.W, "bwd.b": enc.bwd.b, "init_W": enc.init_W}

    def f():
        B, (h0, _) = encode([2, 0, 5, 2], enc)
        return nc.sum(B * weights) + nc.sum(nc.tanh(h0))

    report = nc.finite_diff_check(f, params, tol=1e-3)
    assert report.passed, report.table()
