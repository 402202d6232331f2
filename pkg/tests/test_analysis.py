import numpy as np
import pytest

from loptlib import analysis, core, inference, models, objectives as obj_, utils
from loptlib.analysis import AblationSuite, LandscapeGrid
from loptlib.inference import InferenceConfig

def test_pca_line_is_degenerate():
    t = np.linspace(-1, 1, 20)[:, None]
    line = t * np.array([1.0, 2.0, -1.0])
    with pytest.raises(core.DegenerateDataError):
        analysis.pca_directions(line)
    result = analysis.pca_directions(line, strict=False)
    assert result.degenerate
    assert np.allclose(result.directions @ result.directions.T, np.eye(2), atol=1e-10)
    assert abs(result.directions[0] @ np.array([1.0, 2.0, -1.0]) / np.sqrt(6)) == pytest.approx(1.0)

def test_pca_anisotropic_cloud():
    cloud = utils.normal(utils.PRNGKey(0), 1.0, (1000, 4)) * np.array([3.0, 1.0, 0.1, 0.1])
    result = analysis.pca_directions(cloud)
    cos5 = np.cos(np.deg2rad(5))
    assert abs(result.directions[0][0]) > cos5
    assert abs(result.directions[1][1]) > cos5
    assert not result.degenerate

def test_pca_errors():
    with pytest.raises(core.DegenerateDataError):
        analysis.pca_directions(np.ones((2, 3)))
    with pytest.raises(core.DegenerateDataError):
        analysis.pca_directions(np.ones((5, 3)))
    with pytest.raises(core.DimensionError):
        analysis.pca_directions(np.ones((5, 1)))

def test_grid_constant_field():
    grid = analysis.landscape_grid(lambda p: np.full(len(p), 3.0), np.zeros(3), np.eye(3)[:2], 1.0, resolution=7)
    assert grid.losses.shape == (7, 7)
    assert np.all(grid.losses == 3.0)
    assert analysis.spike_count(grid) == 0

def test_grid_convex_minimum_at_center():
    center = np.array([0.5, -1.0])
    grid = analysis.landscape_grid(lambda p: np.sum((p - center) ** 2, axis=1), center, np.eye(2), 2.0,
                                   resolution=41)
    assert grid.argmin() == (20, 20)
    assert grid.min_is_interior()
    assert grid.half_width == 2.0
    frame = grid.to_frame()
    assert len(frame) == 41 * 41 and list(frame.columns) == ['alpha', 'beta', 'loss']

def test_grid_is_thread_independent():
    fn = lambda p: np.sin(3 * p[:, 0]) * np.cos(2 * p[:, 1])
    a = analysis.landscape_grid(fn, np.zeros(2), np.eye(2), 1.0, resolution=21, chunk_size=50, threads=1)
    b = analysis.landscape_grid(fn, np.zeros(2), np.eye(2), 1.0, resolution=21, chunk_size=50, threads=4)
    assert np.array_equal(a.losses, b.losses)

def test_grid_errors():
    fn = lambda p: np.zeros(len(p))
    with pytest.raises(core.InputError):
        analysis.landscape_grid(fn, np.zeros(2), np.array([[1.0, 0.0], [1.0, 1.0]]), 1.0)
    with pytest.raises(core.DimensionError):
        analysis.landscape_grid(fn, np.zeros(3), np.eye(2), 1.0)
    with pytest.raises(core.ConfigError):
        analysis.landscape_grid(fn, np.zeros(2), np.eye(2), 1.0, resolution=2)

def _grid(losses):
    steps = np.arange(losses.shape[0], dtype=float) - losses.shape[0] // 2
    return LandscapeGrid(center=np.zeros(2), directions=np.eye(2), alphas=steps, betas=steps.copy(),
                         losses=np.asarray(losses, dtype=float))

def test_spike_count():
    losses = np.ones((5, 5))
    losses[2, 2] = 10.0
    assert analysis.spike_count(_grid(losses)) == 1
    # boundary spikes are not counted
    losses[0, 3] = 10.0
    assert analysis.spike_count(_grid(losses)) == 1
    assert analysis.spike_count(_grid(losses), factor=20.0) == 0

def test_laplacian_energy():
    a, b = np.meshgrid(np.arange(5.0), np.arange(5.0), indexing='ij')
    assert analysis.laplacian_energy(_grid(2 * a - b)) == 0.0
    assert analysis.laplacian_energy(_grid(a ** 2 + b ** 2)) == 16.0

def test_convergence_curves():
    curves = analysis.convergence_curves([np.array([3.0, 2.0, 1.0])])
    assert curves['mean'].tolist() == [3.0, 2.0, 1.0]
    assert curves['stderr'].tolist() == [0.0, 0.0, 0.0]
    curves = analysis.convergence_curves([np.ones(4), np.full(4, 3.0)])
    assert curves['mean'].tolist() == [2.0] * 4
    assert curves['n'].tolist() == [2] * 4
    with pytest.raises(core.InputError):
        analysis.convergence_curves([np.ones(4), np.ones(5)])
    with pytest.raises(core.InputError):
        analysis.convergence_curves([])

@pytest.fixture
def rugged():
    model = models.make_rugged_decoder(utils.PRNGKey(0), d_x=2, d_y=8)
    ys = model.evaluate(utils.normal(utils.PRNGKey(1), 1.0, (3, 2)))
    return model, obj_.make_objective('l2'), [obj_.observation(y) for y in ys]

def test_ablation_duplicate_baselines_agree(rugged):
    model, obj, observations = rugged
    suite = AblationSuite(variants={v: None for v in analysis.ABLATION_VARIANTS}, observations=observations,
                          steps=(1, 5))
    report = analysis.run_ablation(suite, model, obj, InferenceConfig())
    assert report.table.shape == (4, 2)
    assert report.loss('full', 5) == report.loss('baseline', 5)
    assert report.loss('random_theta', 1) == report.loss('no_cd_no_buffer', 1)
    assert analysis.relative_improvement(report, 'full', 'baseline', 5) == 0.0
    frame = report.to_frame()
    assert list(frame.columns) == ['variant', 'steps', 'mean_loss'] and len(frame) == 8

def test_ablation_steps_match_trace_prefix(rugged):
    model, obj, observations = rugged
    theta = models.init_mapping(utils.PRNGKey(2), 2, 2, hidden=8)
    variants = {'full': theta, 'no_cd_no_buffer': theta, 'random_theta': theta, 'baseline': None}
    report = analysis.run_ablation(AblationSuite(variants=variants, observations=observations, steps=(2, 6)),
                                   model, obj, InferenceConfig())
    traces = inference.infer_many(theta, model, obj, observations, InferenceConfig(steps=2))
    assert report.loss('full', 2) == pytest.approx(np.mean([tr.final_loss for tr in traces]), rel=1e-12)

def test_ablation_missing_variant(rugged):
    model, obj, observations = rugged
    suite = AblationSuite(variants={'full': None, 'baseline': None}, observations=observations)
    with pytest.raises(core.InputError, match="random_theta"):
        analysis.run_ablation(suite, model, obj, InferenceConfig())

def test_sweep_baseline_lr(rugged):
    model, obj, observations = rugged
    cfg = InferenceConfig(steps=10, optimizer='sgd')
    best, frame = analysis.sweep_baseline_lr(model, obj, observations, cfg, [1e-6, 1e-2, 1e9])
    assert best == 1e-2
    assert np.isinf(frame['mean_loss'].iloc[-1])

def test_paired_landscapes(rugged):
    model, obj, observations = rugged
    theta = models.init_mapping(utils.PRNGKey(2), 2, 2, hidden=8)
    pairs = analysis.paired_landscapes(theta, model, obj, observations[:2], InferenceConfig(steps=5),
                                       resolution=9, n_starts=3)
    assert len(pairs) == 2
    for x_grid, z_grid in pairs:
        assert x_grid.losses.shape == z_grid.losses.shape == (9, 9)
        assert np.all(np.isfinite(x_grid.losses)) and np.all(np.isfinite(z_grid.losses))
