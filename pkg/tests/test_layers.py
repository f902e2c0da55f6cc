import numpy as np
import pytest

from vineyield.nn import Tensor, grad_check
from vineyield.nn.layers import (
    Dropout,
    EncoderBlock,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    PositionalFusion,
    combine_positional,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_linear_shapes_and_gradient(rng):
    lin = Linear(5, 3, rng)
    x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    out = lin(x)
    assert out.shape == (4, 3)
    err = grad_check(lambda: (lin(x) ** 2.0).sum(), [x, lin.w, lin.b])
    assert err < 1e-7


def test_layernorm_normalizes_and_grads(rng):
    ln = LayerNorm(6)
    x = Tensor(rng.standard_normal((3, 6)) * 5 + 2, requires_grad=True)
    out = ln(x)
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)
    err = grad_check(lambda: (ln(x) ** 2.0).sum(), [x, ln.gamma, ln.beta])
    assert err < 1e-6


def test_dropout_train_vs_eval(rng):
    drop = Dropout(0.5, rng)
    x = Tensor(np.ones((100, 10)))
    out_train = drop(x)
    assert not np.allclose(out_train.data, 1.0)  # some units zeroed
    kept = out_train.data != 0
    np.testing.assert_allclose(out_train.data[kept], 2.0)  # inverted scaling
    drop.training = False
    out_eval = drop(x)
    np.testing.assert_allclose(out_eval.data, 1.0)


def test_dropout_rate_validation(rng):
    with pytest.raises(ValueError):
        Dropout(1.0, rng)


def test_attention_single_token_is_projection_of_value(rng):
    mh = MultiHeadSelfAttention(8, 2, rng)
    x = Tensor(rng.standard_normal((1, 8)))
    out = mh(x)
    v = mh.wv(x)
    want = (v @ mh.wo.w + mh.wo.b).data
    np.testing.assert_allclose(out.data, want, atol=1e-12)


def test_attention_identical_tokens_identical_rows(rng):
    mh = MultiHeadSelfAttention(8, 4, rng)
    row = rng.standard_normal(8)
    x = Tensor(np.stack([row, row]))
    out = mh(x).data
    np.testing.assert_allclose(out[0], out[1], atol=1e-12)


def test_attention_rows_sum_to_one(rng):
    mh = MultiHeadSelfAttention(16, 8, rng)
    x = Tensor(rng.standard_normal((4, 16)))
    mh(x)
    attn = mh.last_attention  # (heads, n, n)
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(attn >= 0)


def test_attention_output_is_convex_combination_per_head(rng):
    mh = MultiHeadSelfAttention(8, 2, rng)
    x = Tensor(rng.standard_normal((5, 8)))
    q = mh.wq(x).data.reshape(5, 2, 4).transpose(1, 0, 2)
    v = mh.wv(x).data.reshape(5, 2, 4).transpose(1, 0, 2)
    mh(x)
    attn = mh.last_attention
    mixed = attn @ v
    for h in range(2):
        lo = v[h].min(axis=0) - 1e-9
        hi = v[h].max(axis=0) + 1e-9
        assert np.all(mixed[h] >= lo) and np.all(mixed[h] <= hi)


def test_attention_rejects_bad_head_split(rng):
    with pytest.raises(ValueError):
        MultiHeadSelfAttention(10, 4, rng)


def test_encoder_block_gradcheck(rng):
    eb = EncoderBlock(8, 2, 2, rng)
    x = Tensor(rng.standard_normal((3, 8)), requires_grad=True)
    err = grad_check(lambda: (eb(x) ** 2.0).sum(), [x] + eb.parameters(), max_coords=8)
    assert err < 1e-6


def test_fusion_identity_on_feature_channel(rng):
    pf = PositionalFusion()
    feats = Tensor(rng.standard_normal((4, 6)))
    pos = Tensor(rng.random(4))
    ori = Tensor(rng.random(4))
    out = pf(feats, pos, ori)  # init weights are (1, 0, 0, 0)
    np.testing.assert_allclose(out.data, feats.data)


def test_fusion_position_only_gives_constant_rows(rng):
    pf = PositionalFusion()
    pf.w_feature.data = np.array(0.0)
    pf.w_position.data = np.array(1.0)
    feats = Tensor(rng.standard_normal((4, 6)))
    pos = Tensor(np.array([0.1, 0.4, 0.6, 0.9]))
    ori = Tensor(np.full(4, 0.5))
    out = pf(feats, pos, ori).data
    for i, p in enumerate([0.1, 0.4, 0.6, 0.9]):
        np.testing.assert_allclose(out[i], p, atol=1e-12)


def test_fusion_matches_elementwise_oracle(rng):
    pf = PositionalFusion()
    wf, wp, wo, b = 0.7, -0.3, 0.2, 0.05
    pf.w_feature.data = np.array(wf)
    pf.w_position.data = np.array(wp)
    pf.w_orientation.data = np.array(wo)
    pf.bias.data = np.array(b)
    feats = rng.standard_normal((5, 4))
    pos = rng.random(5)
    ori = np.where(rng.random(5) < 0.5, 0.5, 1.0)
    out = combine_positional(Tensor(feats), Tensor(pos), Tensor(ori), pf).data
    want = np.empty_like(feats)
    for i in range(5):
        for j in range(4):
            want[i, j] = wf * feats[i, j] + wp * pos[i] + wo * ori[i] + b
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_fusion_gradcheck(rng):
    pf = PositionalFusion()
    pf.w_position.data = np.array(0.37)
    pf.w_orientation.data = np.array(-0.21)
    feats = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    pos = Tensor(rng.random(4), requires_grad=True)
    ori = Tensor(rng.random(4), requires_grad=True)
    err = grad_check(lambda: (pf(feats, pos, ori) ** 2.0).sum(),
                     [feats, pos, ori] + pf.parameters())
    assert err < 1e-7


def test_module_state_dict_roundtrip(rng):
    eb = EncoderBlock(8, 2, 2, rng)
    state = eb.state_dict()
    eb2 = EncoderBlock(8, 2, 2, np.random.default_rng(1))
    eb2.load_state_dict(state)
    x = Tensor(rng.standard_normal((3, 8)))
    np.testing.assert_allclose(eb(x).data, eb2(x).data)
    with pytest.raises(ValueError):
        eb2.load_state_dict({k: v for k, v in list(state.items())[1:]})


def test_train_eval_recurses(rng):
    class Wrapper(Module):
        def __init__(self):
            super().__init__()
            self.inner = Dropout(0.3, rng)
            self.stack = [Dropout(0.2, rng)]

    w = Wrapper()
    w.eval()
    assert not w.inner.training
    assert not w.stack[0].training
