import numpy as np
import pytest

from helpers import central_fd_grad, directional_fd, random_coords, rel_err
from kflow import ndcore as nd
from kflow.ndcore import ContractViolation, DualTensor, Tensor, UnsupportedOpError


def test_grad_sum_of_squares():
    p = Tensor([1.0, 2.0, 3.0])
    (g,) = nd.grad(lambda ps: nd.tsum(nd.square(ps[0])), [p])
    assert np.array_equal(g.data, [2.0, 4.0, 6.0])


def test_grad_linear_regression_matches_fd():
    rng = np.random.default_rng(7)
    W = Tensor(rng.standard_normal((4, 3)))
    x = Tensor(rng.standard_normal((5, 4)))
    y = Tensor(rng.standard_normal((5, 3)))

    def loss(ps):
        return nd.mean(nd.square(x @ ps[0] - y))

    (g,) = nd.grad(loss, [W])
    coords = [(0, i) for i in range(W.data.size)]
    fd = central_fd_grad(lambda ps: loss(ps).item(), [W], coords)
    assert rel_err(g.data.ravel(), fd).max() <= 1e-5


def test_grad_constant_loss_is_zero():
    p = Tensor([1.0, -2.0])
    (g,) = nd.grad(lambda ps: Tensor(5.0), [p])
    assert np.array_equal(g.data, np.zeros(2))


def test_grad_requires_scalar_loss():
    p = Tensor([1.0, 2.0])
    with pytest.raises(ContractViolation):
        nd.grad(lambda ps: nd.square(ps[0]), [p])


def test_jvp_identity():
    out = nd.jvp(lambda d: d, np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_jvp_analytic_jacobian():
    # f(x) = (x1^2, x1 x2); J = [[2 x1, 0], [x2, x1]]; at (3,4) along (1,0) -> (6,4)
    def f(d):
        x1 = nd.slice_cols(d, 0, 1) if isinstance(d, Tensor) else _dual_col(d, 0)
        x2 = nd.slice_cols(d, 1, 2) if isinstance(d, Tensor) else _dual_col(d, 1)
        return nd.dual_concat([x1 * x1, x1 * x2]) if isinstance(d, DualTensor) else nd.concat([x1 * x1, x1 * x2])

    out = nd.jvp(f, np.array([[3.0, 4.0]]), np.array([[1.0, 0.0]]))
    assert np.allclose(out.data, [[6.0, 4.0]], atol=1e-14)


def _dual_col(d: DualTensor, i: int) -> DualTensor:
    return DualTensor(nd.slice_cols(d.primal, i, i + 1), nd.slice_cols(d.tangent, i, i + 1))


def _random_mlp(rng, dims):
    layers = []
    for din, dout in zip(dims[:-1], dims[1:]):
        layers.append((Tensor(rng.standard_normal((din, dout)) / np.sqrt(din)),
                       Tensor(rng.standard_normal(dout) * 0.1)))
    return layers


def _mlp_apply(layers, x):
    h = x
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = nd.silu(h)
    return h


def test_jvp_mlp_matches_directional_fd():
    rng = np.random.default_rng(11)
    layers = _random_mlp(rng, [3, 8, 8, 2])
    x = rng.standard_normal((4, 3))
    v = rng.standard_normal((4, 3))

    out = nd.jvp(lambda d: _mlp_apply(layers, d), x, v)
    fd = directional_fd(lambda a: _mlp_apply(layers, Tensor(a)).data, x, v)
    assert rel_err(out.data, fd, floor=1e-6).max() <= 1e-4


def test_jvp_linearity():
    rng = np.random.default_rng(3)
    layers = _random_mlp(rng, [2, 6, 2])
    x = rng.standard_normal((3, 2))
    u = rng.standard_normal((3, 2))
    w = rng.standard_normal((3, 2))
    alpha, beta = 0.37, -1.25

    f = lambda d: _mlp_apply(layers, d)
    combo = nd.jvp(f, x, alpha * u + beta * w).data
    parts = alpha * nd.jvp(f, x, u).data + beta * nd.jvp(f, x, w).data
    assert np.abs(combo - parts).max() <= 1e-12


def test_jvp_shape_mismatch():
    with pytest.raises(ContractViolation):
        nd.jvp(lambda d: d, np.zeros((2, 2)), np.zeros((3, 2)))


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(123)
        layers = _random_mlp(rng, [3, 5, 1])
        x = Tensor(rng.standard_normal((6, 3)))
        params = [t for pair in layers for t in pair]
        gs = nd.grad(lambda ps: nd.mean(nd.square(_mlp_apply(layers, x))), params)
        j = nd.jvp(lambda d: _mlp_apply(layers, d), x.data, np.ones_like(x.data))
        return [g.data.copy() for g in gs], j.data.copy()

    g1, j1 = run()
    g2, j2 = run()
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))
    assert np.array_equal(j1, j2)


def test_unsupported_rank():
    with pytest.raises(UnsupportedOpError):
        Tensor(np.zeros((2, 2, 2)))


def test_unsupported_division_by_tensor():
    with pytest.raises(UnsupportedOpError):
        Tensor([1.0]) / Tensor([2.0])


def test_shape_contracts():
    with pytest.raises(ContractViolation):
        nd.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ContractViolation):
        nd.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_assert_finite():
    nd.assert_finite(Tensor([1.0, 2.0]))
    with pytest.raises(nd.NumericalError):
        nd.assert_finite(Tensor([1.0, np.nan]))
    with pytest.raises(nd.NumericalError):
        nd.assert_finite(Tensor([np.inf]))


def test_grad_through_shared_subexpression():
    # d/dx of (x*x + x*x) = 4x; exercises gradient accumulation at a fan-out node
    x = Tensor([1.5, -2.0])
    y = nd.square(x)

    def loss(ps):
        s = nd.square(ps[0])
        return nd.tsum(s + s)

    (g,) = nd.grad(loss, [x])
    assert np.allclose(g.data, 4.0 * x.data)
    assert np.array_equal(y.data, x.data * x.data)


def test_grad_restores_flags():
    p = Tensor([1.0])
    assert not p.requires_grad
    nd.grad(lambda ps: nd.tsum(ps[0]), [p])
    assert not p.requires_grad


def test_slice_and_concat_roundtrip_grad():
    rng = np.random.default_rng(5)
    a = Tensor(rng.standard_normal((4, 3)))

    def loss(ps):
        left = nd.slice_cols(ps[0], 0, 2)
        right = nd.slice_cols(ps[0], 2, 3)
        return nd.tsum(nd.square(nd.concat([right, left])))

    (g,) = nd.grad(loss, [a])
    assert np.allclose(g.data, 2.0 * a.data)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_grad_random_graph_matches_fd(seed):
    rng = np.random.default_rng(seed)
    layers = _random_mlp(rng, [4, 7, 5, 1])
    params = [t for pair in layers for t in pair]
    x = Tensor(rng.standard_normal((8, 4)))

    def loss(ps):
        return nd.mean(nd.square(_mlp_apply(layers, x)))

    gs = nd.grad(loss, params)
    flat = np.concatenate([g.data.ravel() for g in gs])
    coords = random_coords(rng, params, 40)
    fd = central_fd_grad(lambda ps: loss(ps).item(), params, coords)
    sizes = np.cumsum([0] + [p.data.size for p in params])
    got = np.array([flat[sizes[pi] + fi] for pi, fi in coords])
    assert rel_err(got, fd, floor=1e-6).max() <= 1e-4
