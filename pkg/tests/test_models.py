import numpy as np
import pytest

from loptlib import core, models, utils
from loptlib.core import Tensor

def test_mapping_forward_zero_weights():
    theta = models.init_mapping(utils.PRNGKey(0), d_z=3, d_x=5, hidden=8)
    for t in theta.tensors():
        t.values[...] = 0.0
    assert np.array_equal(models.mapping_forward(theta, Tensor(np.array([1.0, -2.0, 3.0]))).values, np.zeros(5))

def test_mapping_forward_identity():
    theta = models.identity_mapping(4)
    z = np.array([[0.5, 1.0, 2.0, 0.0], [3.0, 0.1, 0.2, 7.0]])
    assert np.array_equal(models.mapping_forward(theta, Tensor(z)).values, z)

def test_mapping_forward_dims():
    theta = models.init_mapping(utils.PRNGKey(0), d_z=3, d_x=2, hidden=8)
    assert theta.dims == [3, 8, 8, 2]
    with pytest.raises(core.DimensionError):
        models.mapping_forward(theta, Tensor(np.ones(4)))

def test_mlp_params_validate_shapes():
    with pytest.raises(core.DimensionError):
        models.MlpParams(weights=[Tensor(np.ones((2, 3)))], biases=[Tensor(np.ones(2))])
    with pytest.raises(core.DimensionError):
        models.MlpParams(weights=[Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1)))],
                         biases=[Tensor(np.ones(3)), Tensor(np.ones(1))])

def test_init_is_seeded():
    a = models.init_mapping(utils.PRNGKey(3), 2, 2)
    b = models.init_mapping(utils.PRNGKey(3), 2, 2)
    for ta, tb in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta.values, tb.values)
    assert all(np.all(bias.values == 0) for bias in a.biases)

def test_clone_and_detached():
    theta = models.init_mapping(utils.PRNGKey(0), 2, 2, hidden=4)
    view, copy = theta.detached(), theta.clone()
    theta.weights[0].values += 1.0
    assert np.array_equal(view.weights[0].values, theta.weights[0].values)
    assert not np.array_equal(copy.weights[0].values, theta.weights[0].values)
    assert not any(t.requires_grad for t in view.tensors())
    assert all(t.requires_grad for t in copy.tensors())

def test_rugged_forward_origin():
    model = models.make_rugged_decoder(utils.PRNGKey(1), d_x=2, d_y=8, phase=False)
    assert np.array_equal(model.evaluate(np.zeros((1, 2))), np.zeros((1, 8)))
    with pytest.raises(core.DimensionError):
        model.evaluate(np.zeros((1, 3)))

def test_rugged_forward_deterministic():
    model = models.make_rugged_decoder(utils.PRNGKey(1))
    x = utils.normal(utils.PRNGKey(2), 1.0, (5, 2))
    assert np.array_equal(model.evaluate(x), model.evaluate(x))

def test_mini_decoder_zero_weights():
    bias = np.arange(6.0)
    params = models.MlpParams(weights=[Tensor(np.zeros((4, 3))), Tensor(np.zeros((3, 6)))],
                              biases=[Tensor(np.ones(3)), Tensor(bias)], activation='tanh')
    decoder = models.MiniDecoder(d_x=4, d_y=6, params=params)
    x = utils.normal(utils.PRNGKey(0), 1.0, (3, 4))
    assert np.array_equal(decoder.evaluate(x), np.tile(bias, (3, 1)))

def test_mini_decoder_uninitialized():
    decoder = models.MiniDecoder(d_x=4, d_y=6)
    with pytest.raises(core.UninitializedModelError):
        decoder.evaluate(np.zeros((1, 4)))
    with pytest.raises(core.UninitializedModelError):
        decoder.to_arrays()

def test_additive_zero_correction():
    wrapped = models.make_rugged_decoder(utils.PRNGKey(0), d_x=3, d_y=4)
    anchor = np.array([0.3, -1.0, 2.0])
    model = models.AdditiveCorrection(wrapped=wrapped, anchor=Tensor(anchor), decay=0.5)
    assert np.array_equal(model.evaluate(np.zeros((1, 3))), wrapped.evaluate(anchor[None]))
    with pytest.raises(core.DimensionError):
        models.AdditiveCorrection(wrapped=wrapped, anchor=Tensor(np.zeros(2)))

def test_fit_mini_decoder_memorizes_one_sample():
    xs, ys = models.make_decoder_dataset(utils.PRNGKey(42), n=1, d_x=4, d_y=8, hidden=8)
    history = []
    params = models.fit_mini_decoder((xs, ys), epochs=10, lr=1e-2, key=utils.PRNGKey(0), hidden=8,
                                     history=history)
    assert len(history) == 10
    assert all(b < a for a, b in zip(history, history[1:]))
    assert not any(t.requires_grad for t in params.tensors())

def test_fit_mini_decoder_errors():
    with pytest.raises(core.InputError):
        models.fit_mini_decoder((np.zeros((0, 4)), np.zeros((0, 8))))
    with pytest.raises(core.DimensionError):
        models.fit_mini_decoder((np.zeros((3, 4)), np.zeros((2, 8))))

def test_make_mini_decoder_fits(oracle_fixture):
    rec = oracle_fixture.get('mini_decoder_fit')
    dims = {k: rec.inputs[k] for k in ('d_x', 'd_y', 'hidden')}
    decoder = models.make_mini_decoder(utils.PRNGKey(rec.inputs['seed']), n_data=rec.inputs['n_data'],
                                       epochs=rec.inputs['epochs'], **dims)
    xs, ys = models.make_decoder_dataset(utils.PRNGKey(rec.inputs['seed']).split()[0], n=rec.inputs['n_data'],
                                         **dims)
    variance = np.mean((ys - ys.mean(axis=0)) ** 2)
    assert np.mean((decoder.evaluate(xs) - ys) ** 2) < rec.expected['max_relative_mse'][0] * variance

def test_model_weight_files(tmp_path):
    wrapped = models.make_rugged_decoder(utils.PRNGKey(0), d_x=3, d_y=4)
    model = models.AdditiveCorrection(wrapped=wrapped, anchor=Tensor(np.ones(3)), decay=0.5)
    path = str(tmp_path / "model.yaml")
    utils.save_container(path, model.to_arrays(), meta=model.meta())
    loaded = models.model_from_arrays(*utils.load_container(path, utils.WEIGHTS_VERSION))
    x = utils.normal(utils.PRNGKey(1), 1.0, (4, 3))
    assert isinstance(loaded, models.AdditiveCorrection) and loaded.decay == 0.5
    assert np.array_equal(loaded.evaluate(x), model.evaluate(x))

def test_get_model():
    assert models.get_model('rugged_decoder') is models.RuggedDecoder
    with pytest.raises(core.ConfigError):
        models.get_model('stylegan')
