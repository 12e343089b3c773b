import numpy as np
import pytest

from wtdebias import autograd as ag
from wtdebias.autograd import ShapeError, Tensor
from wtdebias.nn import MLP, Embedding, SelfAttention


def test_mlp_shapes_and_state_roundtrip():
    rng = np.random.default_rng(0)
    net = MLP((4, 8, 3), rng)
    x = Tensor(rng.normal(size=(5, 4)))
    out = net(x)
    assert out.shape == (5, 3)
    other = MLP((4, 8, 3), np.random.default_rng(1))
    other.load_state(net.state())
    np.testing.assert_array_equal(other(x).data, out.data)


def test_load_state_rejects_shape_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        MLP((4, 8, 3), rng).load_state(MLP((4, 6, 3), rng).state())


def test_attention_rows_are_distributions():
    rng = np.random.default_rng(0)
    att = SelfAttention(3, 5, rng)
    out = att(Tensor(rng.normal(size=(2, 4, 3))))
    assert out.shape == (2, 4, 5)
    np.testing.assert_allclose(att.last_weights.sum(axis=-1), 1.0)


def test_attention_identical_tokens_give_identical_outputs():
    rng = np.random.default_rng(0)
    att = SelfAttention(3, 5, rng)
    tok = np.tile(rng.normal(size=(1, 1, 3)), (2, 4, 1))
    out = att(Tensor(tok)).data
    np.testing.assert_allclose(out, np.broadcast_to(out[:, :1], out.shape), atol=1e-12)


def test_attention_needs_rank_three():
    with pytest.raises(ShapeError):
        SelfAttention(3, 5, np.random.default_rng(0))(Tensor(np.ones((4, 3))))


def test_embedding_lookup_gradient():
    emb = Embedding(3, 2, np.random.default_rng(0))
    ag.sum_(emb(np.array([0, 2, 2]))).backward()
    np.testing.assert_array_equal(emb.table.grad, [[1, 1], [0, 0], [2, 2]])
