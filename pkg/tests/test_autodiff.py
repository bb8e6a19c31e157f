import numpy as np
import pytest

from selar import autodiff as ad
from selar.autodiff import SparseBool, Tensor
from selar.errors import ContractError, NestingError, NumericError, ShapeError
from selar.gradcheck import OP_TOL, check_function, op_cases, op_suite, toy_meta_check


@pytest.mark.parametrize("name", sorted(op_cases(np.random.default_rng(0))))
def test_op_matches_central_differences(name):
    for seed in (0, 1):
        fn, arrays = op_cases(np.random.default_rng(seed))[name]
        result = check_function(name, fn, arrays, OP_TOL)
        assert result.passed, f"{name}: {result.error:.2e}"


def test_op_suite_negative_control():
    assert not any(r.passed for r in op_suite(0, corrupt=True))


def test_sigmoid_and_bce_examples():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    eps = 1e-9
    loss = ad.binary_cross_entropy(Tensor([1 - eps]), Tensor([1.0]))
    assert float(loss.data[0]) <= 2e-7


def test_identity_pattern_matmul():
    x = np.random.default_rng(0).normal(size=(5, 3))
    out = ad.sparse_dense_matmul(SparseBool(np.eye(5, dtype=bool)), Tensor(x))
    assert np.array_equal(out.data, x)


def test_grad_examples():
    w = Tensor(3.0, requires_grad=True)
    (g,) = ad.grad(ad.mul(w, w), [w])
    assert g.item() == 6.0
    x = np.array([-1.0, 0.3, 2.0])
    w = Tensor(x, requires_grad=True)
    (g,) = ad.grad(ad.sum(ad.sigmoid(w)), [w])
    s = 1 / (1 + np.exp(-x))
    np.testing.assert_allclose(g.data, s * (1 - s), rtol=1e-14)


def test_grad_linearity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    f = ad.sum(ad.sigmoid(x))
    h = ad.sum(ad.mul(x, x))
    (gf,) = ad.grad(f, [x])
    (gh,) = ad.grad(h, [x])
    (gs,) = ad.grad(ad.add(ad.scale(f, 2.0), ad.scale(h, -0.5)), [x])
    np.testing.assert_allclose(gs.data, 2 * gf.data - 0.5 * gh.data, atol=1e-14)


def test_unreachable_param_gets_zero():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    (gb,) = ad.grad(ad.sum(a), [b])
    assert gb.shape == (2, 2) and not gb.data.any()


def test_grad_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ad.grad(x, [x])
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(NumericError):
        Tensor([np.nan])


def test_second_order_through_create_graph():
    w = Tensor(2.0, requires_grad=True)
    (g,) = ad.grad(ad.mul(ad.mul(w, w), w), [w], create_graph=True)  # 3 w^2
    (gg,) = ad.nested_grad(g, [w])
    assert gg.item() == pytest.approx(12.0, abs=1e-14)


def test_nesting_error_without_create_graph():
    w = Tensor(0.5, requires_grad=True)
    theta = Tensor(0.1, requires_grad=True)
    (g,) = ad.grad(ad.mul(ad.sigmoid(theta), ad.mul(w, w)), [w])
    w_hat = ad.sub(w, ad.scale(g, 0.1))
    with pytest.raises(NestingError):
        ad.nested_grad(ad.mul(w_hat, w_hat), [theta])


def test_outer_independent_of_w_hat_is_zero():
    w = Tensor(0.5, requires_grad=True)
    theta = Tensor(0.1, requires_grad=True)
    (g,) = ad.grad(ad.mul(ad.sigmoid(theta), ad.mul(w, w)), [w], create_graph=True)
    _ = ad.sub(w, ad.scale(g, 0.1))
    (gt,) = ad.nested_grad(ad.mul(w, 3.0), [theta])
    assert gt.item() == 0.0


def test_scalar_toy_closed_form():
    for alpha, theta0 in [(0.1, 0.25), (0.5, -1.2), (0.01, 3.0)]:
        assert toy_meta_check(alpha=alpha, theta0=theta0).error <= 1e-10


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b.c": rng.normal(size=5), "s": np.array(1.5)}
    path = tmp_path / "x.ckpt"
    ad.save_checkpoint(path, arrays)
    back = ad.load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])
    path.write_bytes(b"nope")
    with pytest.raises(ContractError):
        ad.load_checkpoint(path)
