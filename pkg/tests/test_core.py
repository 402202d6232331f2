import numpy as np
import pytest

from loptlib import core, models, utils, checks
from loptlib.core import Tensor

def test_matmul():
    a = Tensor(np.eye(2))
    b = Tensor([[3., 4.], [5., 6.]])
    assert np.array_equal(core.matmul(a, b).values, [[3., 4.], [5., 6.]])
    assert np.array_equal((Tensor([[1., 2.]]) @ Tensor([[3.], [4.]])).values, [[11.]])

    with pytest.raises(core.DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        core.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

def test_leaky_relu():
    assert core.leaky_relu(Tensor(2.0), 0.2).item() == 2.0
    assert core.leaky_relu(Tensor(-2.0), 0.2).item() == pytest.approx(-0.4, abs=1e-15)
    with pytest.raises(ValueError):
        core.leaky_relu(Tensor(1.0), -0.1)

def test_mse():
    assert core.mse(Tensor([1., 2.]), Tensor([1., 2.])).item() == 0.0
    assert core.mse(Tensor([0., 0.]), Tensor([3., 4.])).item() == 12.5
    # rows are separate problems: per-row means are summed
    pred, target = Tensor([[0., 0.], [1., 1.]]), Tensor([[3., 4.], [1., 1.]])
    assert core.mse(pred, target).item() == 12.5
    with pytest.raises(core.DimensionError):
        core.mse(Tensor([1., 2.]), Tensor([1., 2., 3.]))

def test_masked_mse():
    pred, target = Tensor([1., 5., 1., 7.]), Tensor([1., 0., 1., 0.])
    assert core.masked_mse(pred, target, np.array([True, False, True, False])).item() == 0.0
    with pytest.raises(core.InputError):
        core.masked_mse(pred, target, np.zeros(4, dtype=bool))
    with pytest.raises(core.DimensionError):
        core.masked_mse(pred, target, np.ones(3, dtype=bool))

def test_add_bias_broadcast():
    a, b = Tensor(np.ones((3, 2)), requires_grad=True), Tensor([1., 2.], requires_grad=True)
    with core.tape():
        out = core.add(a, b)
        core.backward(core.sum(out))
    assert np.array_equal(out.values, [[2., 3.]] * 3)
    assert np.array_equal(b.grad, [3., 3.])
    with pytest.raises(core.DimensionError):
        core.add(Tensor(np.ones((3, 2))), Tensor(np.ones(3)))

def test_backward_sum():
    z = Tensor(np.arange(5.), requires_grad=True)
    with core.tape():
        core.backward(core.sum(z))
    assert np.array_equal(z.grad, np.ones(5))

def test_backward_accumulates():
    z = Tensor([0.5, -1.0, 2.0], requires_grad=True)
    with core.tape():
        core.backward(core.l2_norm_sq(z))
    first = z.grad.copy()
    with core.tape():
        core.backward(core.l2_norm_sq(z))
    assert np.array_equal(z.grad, 2 * first)
    z.zero_grad()
    assert z.grad is None

def test_backward_errors():
    z = Tensor(np.ones(3), requires_grad=True)
    with core.tape():
        with pytest.raises(core.ContractError):
            core.backward(core.scale(z, 2.0))
    # a loss computed outside a tape has no graph
    with pytest.raises(core.ContractError):
        core.backward(core.sum(z))

def test_backward_clears_tape():
    z = Tensor(np.ones(3), requires_grad=True)
    with core.tape() as t:
        loss = core.sum(core.tanh(z))
        assert len(t) == 2
        core.backward(loss)
        assert len(t) == 0
        assert t.adjoint_calls == 2

def test_constants_get_no_grad():
    z, c = Tensor(np.ones(2), requires_grad=True), Tensor(np.full(2, 3.0))
    with core.tape():
        core.backward(core.sum(core.mul(z, c)))
    assert np.array_equal(z.grad, [3., 3.])
    assert c.grad is None

def test_detach_shares_storage():
    t = Tensor([1., 2.], requires_grad=True)
    d = t.detach()
    assert not d.requires_grad
    t.values -= 1.0
    assert np.array_equal(d.values, [0., 1.])

def test_mlp_gradient_matches_finite_differences():
    key = utils.PRNGKey(7)
    kt, kz, ky = key.split(3)
    theta = models.init_mlp(kt, [3, 16, 16, 4], zero_bias=False, requires_grad=False)
    z, y = utils.normal(kz, 1.0, 3), Tensor(utils.normal(ky, 1.0, 4))
    err = checks.check_gradient([z], lambda ts: core.mse(models.mapping_forward(theta, ts[0]), y))
    assert err < 1e-5

def test_perturbed_adjoint_is_caught():
    case = {c.name: c for c in checks.GRAD_CASES}['tanh']
    inputs, loss = case.make(utils.PRNGKey(0))
    assert checks.check_gradient(inputs, loss) < 1e-5
    with core.perturb_adjoint('tanh', 1.01):
        assert checks.check_gradient(inputs, loss) > 1e-5
    with pytest.raises(KeyError):
        with core.perturb_adjoint('conv2d', 2.0):
            pass
