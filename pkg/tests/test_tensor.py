import numpy as np
import pytest

from vineyield.nn import Tensor, concat, conv2d, gelu, grad_check, softmax
from vineyield.nn.tensor import table_interp


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


def test_sum_of_squares_gradient_exact():
    x = t([1.0, -2.0, 3.0])
    out = (x * x).sum()
    out.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_grad_check_on_basic_ops():
    rng = np.random.default_rng(0)
    x = t(rng.uniform(0.5, 2.0, size=(3, 4)))
    y = t(rng.uniform(0.5, 2.0, size=(3, 4)))
    cases = [
        lambda: (x + y).sum(),
        lambda: (x - y * 2.0).sum(),
        lambda: (x * y).sum(),
        lambda: (x / y).sum(),
        lambda: (x**3.0).sum(),
        lambda: x.exp().sum(),
        lambda: x.log().sum(),
        lambda: x.sqrt().sum(),
        lambda: x.tanh().sum(),
        lambda: x.erf().sum(),
        lambda: (x - 1.2).abs().sum(),
        lambda: ((x - 1.0).relu() * y).sum(),
        lambda: (x.clamp(0.8, 1.5) * y).sum(),
        lambda: gelu(x - 1.0).sum(),
        lambda: softmax(x, axis=-1).log().sum(),
        lambda: (x.reshape(4, 3) @ y.reshape(3, 4)).sum(),
        lambda: (x.swapaxes(0, 1) * y.swapaxes(0, 1)).sum(),
        lambda: x[1:, :2].sum() * 3.0,
        lambda: concat([x, y], axis=0).exp().sum(),
        lambda: (x.mean(axis=0) * y.sum(axis=0)).sum(),
    ]
    for i, fn in enumerate(cases):
        err = grad_check(fn, [x, y])
        assert err < 1e-7, f"case {i} gradient error {err}"


def test_broadcasting_gradients():
    rng = np.random.default_rng(1)
    a = t(rng.standard_normal((4, 3)))
    b = t(rng.standard_normal(3))
    c = t(rng.standard_normal((4, 1)))
    err = grad_check(lambda: ((a * b + c) ** 2.0).sum(), [a, b, c])
    assert err < 1e-8


def test_batched_matmul_gradients():
    rng = np.random.default_rng(2)
    a = t(rng.standard_normal((2, 3, 4)))
    b = t(rng.standard_normal((2, 4, 5)))
    err = grad_check(lambda: ((a @ b) ** 2.0).sum(), [a, b], max_coords=20)
    assert err < 1e-8


def test_diamond_graph_accumulates_once():
    x = t([2.0])
    y = x * 3.0
    out = y * y + y  # y used twice plus a second path
    out.backward(np.ones(1))
    # d/dx (9x^2 + 3x) = 18x + 3 = 39
    np.testing.assert_allclose(x.grad, [39.0])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    x = Tensor(rng.standard_normal((5, 7)) * 4)
    s = softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(s.data >= 0)


def test_detach_blocks_gradient():
    x = t([1.0, 2.0])
    out = (x.detach() * x).sum()
    out.backward()
    np.testing.assert_allclose(x.grad, x.data)  # only the live branch contributes


def test_conv2d_against_direct_convolution():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    for stride in (1, 2):
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        oh = (7 + 2 - 3) // stride + 1
        ow = (6 + 2 - 3) // stride + 1
        want = np.zeros((2, 4, oh, ow))
        for n in range(2):
            for f in range(4):
                for i in range(oh):
                    for j in range(ow):
                        patch = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                        want[n, f, i, j] = np.sum(patch * w[f]) + b[f]
        np.testing.assert_allclose(out, want, atol=1e-10)


def test_conv2d_gradients():
    rng = np.random.default_rng(5)
    x = t(rng.standard_normal((2, 2, 6, 6)))
    w = t(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    b = t(rng.standard_normal(3))
    for stride in (1, 2):
        err = grad_check(
            lambda: (conv2d(x, w, b, stride=stride, padding=1) ** 2.0).sum(),
            [x, w, b], max_coords=25,
        )
        assert err < 1e-7


def test_table_interp_matches_segment_slope():
    knots = np.linspace(0.0, 2.0, 21)
    values = np.sin(knots)
    a = t(np.array(0.737))
    out = table_interp(a, knots, values)
    assert out.item() == pytest.approx(np.interp(0.737, knots, values))
    err = grad_check(lambda: table_interp(a, knots, values), [a])
    assert err < 1e-9


def test_scalar_backward_requires_scalar():
    x = t([1.0, 2.0])
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_dtype_preserved():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    out = (x * 2.0 + 1.0).exp().sum()
    assert out.dtype == np.float32
    out.backward()
    assert x.grad.dtype == np.float32
