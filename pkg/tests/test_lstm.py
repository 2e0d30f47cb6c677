import numpy as np
import pytest

from enrnn.lstm import LstmParams, init_lstm, lstm_cell_forward, lstm_forward
from enrnn.training import TrainConfig, gradcheck


def test_zero_weights_keep_state_at_zero():
    P = LstmParams(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8), np.zeros((1, 2)), np.zeros(1))
    tape = lstm_forward(P, np.random.default_rng(0).standard_normal((2, 5, 3)))
    assert np.all(tape.h == 0) and np.all(tape.c == 0)


def test_forward_matches_cell_replay():
    rng = np.random.default_rng(1)
    P = init_lstm(3, 4, 2, rng, forget_bias=1.0)
    np.testing.assert_array_equal(P.b[4:8], 1.0)
    np.testing.assert_array_equal(np.delete(P.b, np.s_[4:8]), 0.0)
    x = rng.standard_normal((2, 6, 3))
    tape = lstm_forward(P, x)
    h, c = np.zeros((2, 4)), np.zeros((2, 4))
    for t in range(6):
        out = lstm_cell_forward(P, x[:, t], h, c)
        h, c = out[0], out[1]
        np.testing.assert_allclose(tape.h[:, t + 1], h, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(tape.y[:, -1], h @ P.V.T + P.c, rtol=1e-13)


@pytest.mark.parametrize("task", ["adding", "copying"])
def test_lstm_gradcheck(task):
    cfg = TrainConfig(task=task, model="lstm", hidden=5, seq_len=6, batch_size=3,
                      train_size=3, test_size=3, forget_bias=1.0, seed=0)
    rep = gradcheck(cfg)
    assert rep.passed(1e-4), rep.format()
    assert set(rep.by_name()) == set(LstmParams.names)
