import numpy as np
import pytest

from loptlib import core, optimizers
from loptlib.core import Tensor

def test_sgd_step():
    p = Tensor([1.0])
    optimizers.step(optimizers.make_optimizer('sgd', lr=0.1), [p], [np.array([2.0])])
    assert p.values[0] == pytest.approx(0.8, abs=1e-12)

def test_adam_first_step_is_sign():
    g = np.array([2.0, -0.5, 1e-3, -40.0])
    p = Tensor(np.zeros(4))
    optimizers.step(optimizers.make_optimizer('adam', lr=0.01), [p], [g])
    assert np.allclose(p.values, -0.01 * np.sign(g), rtol=0, atol=1e-6)

def test_adam_matches_closed_form():
    state = optimizers.make_optimizer('adam', lr=0.1)
    p = Tensor([0.0])
    grads = [1.0, -2.0, 0.5]
    m = v = 0.0
    expected = 0.0
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        optimizers.step(state, [p], [np.array([g])])
    assert state.t == 3
    assert p.values[0] == pytest.approx(expected, abs=1e-12)

def test_adamw_decoupled_decay():
    p = Tensor([1.0])
    optimizers.step(optimizers.make_optimizer('adamw', lr=1e-4, weight_decay=0.1), [p], [np.array([0.0])])
    assert p.values[0] == pytest.approx(1.0 - 1e-5, abs=1e-15)

def test_zero_lr_is_bit_identical():
    values = np.array([0.3, -1.7, 1e-8])
    for kind in ('sgd', 'adam', 'adamw'):
        p = Tensor(values.copy())
        state = optimizers.make_optimizer(kind, lr=0.0, **({'weight_decay': 0.1} if kind == 'adamw' else {}))
        optimizers.step(state, [p], [np.array([1.0, -3.0, 2.0])])
        assert np.array_equal(p.values, values)

def test_step_uses_param_grads():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with core.tape():
        core.backward(core.l2_norm_sq(p))
    optimizers.step(optimizers.make_optimizer('sgd', lr=0.25), [p])
    assert np.array_equal(p.values, [0.5, 1.0])

def test_step_errors():
    p = Tensor([1.0], requires_grad=True)
    with pytest.raises(core.ContractError):
        optimizers.step(optimizers.make_optimizer('sgd'), [p])
    with pytest.raises(core.DimensionError):
        optimizers.step(optimizers.make_optimizer('sgd'), [p], [np.zeros(2)])
    with pytest.raises(core.ConfigError):
        optimizers.make_optimizer('lbfgs')
    with pytest.raises(core.ConfigError):
        optimizers.make_optimizer('sgd', lr=-1.0)

def test_state_arrays():
    state = optimizers.make_optimizer('adam', lr=0.1)
    optimizers.step(state, [Tensor(np.zeros((2, 2))), Tensor(np.zeros(3))], [np.ones((2, 2)), np.ones(3)])
    restored = optimizers.OptimizerState.from_arrays(state.arrays(), state.meta())
    assert restored.t == 1 and restored.kind == 'adam'
    for a, b in zip(state.m + state.v, restored.m + restored.v):
        assert np.array_equal(a, b)
