import numpy as np
import pytest

from signgraph import tensor as tz
from signgraph.backbone import NodeGrid
from signgraph.head import (
    EOS_ID, SOS_ID, cross_entropy, head_out_len, init_decoder_params,
    init_head_params, init_lstm_params, lstm_direction, pool_nodes,
    temporal_head, translation_decoder,
)
from signgraph.rng import CounterRng
from signgraph.tensor import ShapeError, Tensor


def test_pool_nodes_mean():
    feats = np.arange(12.0).reshape(6, 2)
    g = NodeGrid(1, 3, 2, 2, Tensor(feats))
    out = pool_nodes(g)
    assert np.allclose(out.data, [feats[:3].mean(0), feats[3:].mean(0)])


def test_head_out_len():
    assert [head_out_len(t) for t in (4, 5, 7, 8, 31)] == [1, 1, 1, 2, 7]


def _head_params(d, hidden, classes, key="hp"):
    params = {}
    init_head_params(d, hidden, classes, CounterRng(key), params)
    return params


def test_head_shapes():
    params = _head_params(6, 4, 5)
    logits, aux, enc = temporal_head(Tensor(CounterRng("hx").normal((10, 6))),
                                     params, 4)
    assert logits.data.shape == (2, 5)
    assert aux.data.shape == (2, 5)
    assert enc.data.shape == (2, 8)


def test_head_too_short_rejected():
    params = _head_params(3, 2, 4)
    with pytest.raises(ShapeError, match="T >= 4"):
        temporal_head(Tensor(np.ones((3, 3))), params, 2)


def test_head_zero_weights_uniform_logits():
    params = _head_params(3, 2, 4)
    for p in params.values():
        p.data[:] = 0.0
    logits, aux, _ = temporal_head(Tensor(CounterRng("zz").normal((8, 3))),
                                   params, 2)
    # all-zero classifiers give constant logits; log-softmax is uniform
    lp = tz.softmax_log(logits).data
    assert np.allclose(lp, np.log(0.25))
    assert np.allclose(tz.softmax_log(aux).data, np.log(0.25))


def test_lstm_bidirectionality_witness():
    """The backward direction's output at t=0 depends on the last input."""
    params = {}
    init_lstm_params(2, 3, CounterRng("bi"), "bw", params)
    x1 = CounterRng("bi-x").normal((5, 2))
    x2 = x1.copy()
    x2[-1] += 1.0
    o1 = lstm_direction(Tensor(x1), params, "bw", 3, reverse=True)
    o2 = lstm_direction(Tensor(x2), params, "bw", 3, reverse=True)
    assert not np.allclose(o1.data[0], o2.data[0])
    # forward direction at t=0 is unaffected by the last input
    f1 = lstm_direction(Tensor(x1), params, "bw", 3)
    f2 = lstm_direction(Tensor(x2), params, "bw", 3)
    assert np.allclose(f1.data[0], f2.data[0])


def _dec_params(d_enc, hidden, vocab, emb, key="dp", zero=False):
    params = {}
    init_decoder_params(d_enc, hidden, vocab, emb, CounterRng(key), params)
    if zero:
        for p in params.values():
            p.data[:] = 0.0
    return params


def test_decoder_teacher_forcing_shapes_and_sos():
    params = _dec_params(4, 3, 6, 2)
    enc = Tensor(CounterRng("enc").normal((3, 4)))
    lp = translation_decoder(enc, [SOS_ID, 3, 4], params, 3)
    assert lp.data.shape == (3, 6)
    assert np.allclose(np.exp(lp.data).sum(1), 1.0)
    with pytest.raises(ValueError, match="SOS"):
        translation_decoder(enc, [3, 4], params, 3)
    with pytest.raises(ValueError, match="empty"):
        translation_decoder(enc, [], params, 3)


def test_decoder_greedy_zero_weights_emits_eos():
    # uniform logits: argmax tie goes to id 0 = EOS, so output is empty
    params = _dec_params(4, 3, 6, 2, zero=True)
    enc = Tensor(np.ones((2, 4)))
    lp, toks = translation_decoder(enc, None, params, 3, teacher_forcing=False)
    assert toks == []
    assert lp.data.shape == (1, 6)


def test_decoder_greedy_respects_max_len():
    params = _dec_params(4, 3, 6, 2)
    # bias strongly toward token 5 so EOS never wins
    params["decoder.out.b"].data[5] = 50.0
    enc = Tensor(CounterRng("ml").normal((2, 4)))
    _, toks = translation_decoder(enc, None, params, 3,
                                  teacher_forcing=False, max_len=7)
    assert toks == [5] * 7


def test_decoder_uniform_ce_is_log_vocab():
    params = _dec_params(4, 3, 6, 2, zero=True)
    enc = Tensor(np.ones((2, 4)))
    lp = translation_decoder(enc, [SOS_ID, 3, 4], params, 3)
    loss = cross_entropy(lp, [3, 4, EOS_ID])
    assert float(loss.data) == pytest.approx(np.log(6.0))


def test_cross_entropy_hand_case():
    lp = Tensor(np.log(np.array([[0.5, 0.25, 0.25], [0.1, 0.8, 0.1]])))
    loss = cross_entropy(lp, [0, 1])
    assert float(loss.data) == pytest.approx(-(np.log(0.5) + np.log(0.8)) / 2)
    with pytest.raises(ShapeError):
        cross_entropy(lp, [0])


def test_empty_encoder_rejected():
    params = _dec_params(4, 3, 6, 2)
    with pytest.raises(ShapeError, match="empty encoder"):
        translation_decoder(Tensor(np.zeros((0, 4))), [SOS_ID], params, 3)
