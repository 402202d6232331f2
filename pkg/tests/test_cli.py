import os

import numpy as np
import pandas as pd
import pytest
import yaml

from loptlib import cli, core, experiment, models, utils
from loptlib.configs import resolve_config

@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("LOPT_SEED", raising=False)

@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.yaml"
    path.write_text(yaml.safe_dump({'preset': 'smoke'}))
    return str(path)

def _observations_csv(path, ys):
    pd.DataFrame(ys, columns=[f"y{j}" for j in range(ys.shape[1])]).to_csv(path, index=False)
    return str(path)

@pytest.fixture
def trained(tmp_path, smoke_config):
    out = str(tmp_path / "ckpt")
    assert cli.main(['train', smoke_config, '--out', out]) == 0
    ckpt = experiment.load_checkpoint(os.path.join(out, 'full.yaml'))
    ys = ckpt.model.evaluate(utils.normal(utils.PRNGKey(5), 1.0, (2, 2)))
    return os.path.join(out, 'full.yaml'), _observations_csv(tmp_path / "obs.csv", ys)

def _read(path):
    return utils.read_csv(path)

def test_train_smoke(tmp_path, smoke_config):
    out = tmp_path / "out"
    assert cli.main(['train', smoke_config, '--out', str(out)]) == 0
    assert sorted(os.listdir(out)) == ['full-rounds.csv', 'full.yaml']
    assert len(_read(out / 'full-rounds.csv')) == 1
    with open(out / 'full-rounds.csv') as f:
        assert f.readline().startswith('# config-hash: ')

def test_train_is_deterministic(tmp_path, smoke_config):
    outs = [tmp_path / "a", tmp_path / "b"]
    assert cli.main(['--threads', '1', 'train', smoke_config, '--out', str(outs[0])]) == 0
    assert cli.main(['--threads', '4', 'train', smoke_config, '--out', str(outs[1])]) == 0
    for name in ('full.yaml', 'full-rounds.csv'):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

def test_train_periodic_checkpoints(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({'preset': 'smoke', 'train': {'n_buffers': 3, 'checkpoint_every': 2}}))
    out = tmp_path / "out"
    assert cli.main(['train', str(path), '--out', str(out)]) == 0
    assert sorted(f for f in os.listdir(out) if f.endswith('.yaml')) == ['full-round-0002.yaml', 'full.yaml']
    assert experiment.load_checkpoint(str(out / 'full-round-0002.yaml')).round_id == 2

def test_train_online(tmp_path, smoke_config):
    out = tmp_path / "out"
    assert cli.main(['train', smoke_config, '--online', '--out', str(out)]) == 0
    assert os.path.exists(out / 'no_cd_no_buffer.yaml')

def test_train_bad_config(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({'preset': 'smoke', 'train': {'n_buffers': 0}}))
    assert cli.main(['train', str(path), '--out', str(tmp_path / "out")]) == 2
    assert cli.main(['train', str(tmp_path / "missing.yaml"), '--out', str(tmp_path / "out")]) == 3

def test_infer(tmp_path, trained):
    ckpt, obs = trained
    out = tmp_path / "infer"
    assert cli.main(['infer', ckpt, obs, '--out', str(out)]) == 0
    assert sorted(os.listdir(out)) == ['curves-mapped.csv', 'obs-0000-mapped.csv', 'obs-0001-mapped.csv']
    trace = _read(out / 'obs-0000-mapped.csv')
    assert list(trace.columns) == ['step', 'loss', 'p0', 'p1', 'p2', 'p3'] and len(trace) == 4
    assert cli.main(['infer', ckpt, obs, '--baseline', '--steps', '5', '--out', str(out)]) == 0
    assert len(_read(out / 'obs-0001-baseline.csv')) == 6
    assert len(_read(out / 'curves-baseline.csv')) == 6

def test_infer_is_deterministic(tmp_path, trained):
    ckpt, obs = trained
    assert cli.main(['--threads', '1', 'infer', ckpt, obs, '--out', str(tmp_path / "a")]) == 0
    assert cli.main(['--threads', '4', 'infer', ckpt, obs, '--out', str(tmp_path / "b")]) == 0
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

def test_infer_identity_theta(tmp_path):
    config = resolve_config(preset='smoke')
    model = experiment.build_model(config)
    theta = models.identity_mapping(2, slope=1.0)
    ckpt = str(tmp_path / "identity.yaml")
    experiment.save_checkpoint(ckpt, theta, experiment.train_config(config).theta_state(), 0,
                               model, config)
    obs = _observations_csv(tmp_path / "obs.csv", model.evaluate(np.array([[0.5, -0.3], [1.0, 0.2]])))
    out = tmp_path / "out"
    assert cli.main(['infer', ckpt, obs, '--baseline', '--out', str(out)]) == 0
    assert cli.main(['infer', ckpt, obs, '--mapped', '--out', str(out)]) == 0
    for i in range(2):
        base = (out / f"obs-{i:04d}-baseline.csv").read_bytes()
        assert base == (out / f"obs-{i:04d}-mapped.csv").read_bytes()
    assert (out / "curves-baseline.csv").read_bytes() == (out / "curves-mapped.csv").read_bytes()

def test_infer_hypotheses(tmp_path, trained):
    ckpt, obs = trained
    out = tmp_path / "hyp"
    assert cli.main(['infer', ckpt, obs, '--hypotheses', '4', '--mask', '0:4', '--out', str(out)]) == 0
    assert len([f for f in os.listdir(out) if f.startswith('obs-0000-h')]) == 4
    recon = _read(out / 'recon-obs-0000.csv')
    assert len(recon) == 4 and list(recon.columns[:3]) == ['hypothesis', 'seed', 'final_loss']
    assert recon['final_loss'].is_monotonic_increasing
    assert cli.main(['infer', ckpt, obs, '--hypotheses', '2', '--baseline', '--out', str(out)]) == 2

def test_infer_honours_env_seed(tmp_path, trained, monkeypatch):
    ckpt, obs = trained
    assert cli.main(['infer', ckpt, obs, '--hypotheses', '2', '--out', str(tmp_path / "a")]) == 0
    monkeypatch.setenv("LOPT_SEED", "7")
    assert cli.main(['infer', ckpt, obs, '--hypotheses', '2', '--out', str(tmp_path / "b")]) == 0
    assert sorted(_read(tmp_path / "a" / 'recon-obs-0000.csv')['seed']) == [0, 1]
    assert sorted(_read(tmp_path / "b" / 'recon-obs-0000.csv')['seed']) == [7, 8]
    assert cli.main(['landscape', ckpt, obs, '--out', str(tmp_path / "land")]) == 0

def test_infer_dimension_mismatch(tmp_path, trained, caplog):
    ckpt, _ = trained
    obs = _observations_csv(tmp_path / "wide.csv", np.zeros((1, 5)))
    assert cli.main(['infer', ckpt, obs, '--out', str(tmp_path / "out")]) == 2
    assert "dim 5" in caplog.text and "8" in caplog.text
    assert cli.main(['infer', str(tmp_path / "nope.yaml"), obs, '--out', str(tmp_path / "out")]) == 3

def test_landscape(tmp_path, trained):
    ckpt, obs = trained
    out = tmp_path / "land"
    assert cli.main(['landscape', ckpt, obs, '--out', str(out)]) == 0
    grid = _read(out / 'grid-obs-0001-z.csv')
    assert list(grid.columns) == ['alpha', 'beta', 'loss'] and len(grid) == 25
    summary = _read(out / 'landscape-summary.csv')
    assert len(summary) == 4 and set(summary['space']) == {'x', 'z'}

def test_ablate(tmp_path, smoke_config):
    ckpts = str(tmp_path / "ckpt")
    assert cli.main(['train', smoke_config, '--out', ckpts]) == 0
    out = str(tmp_path / "ablate")
    assert cli.main(['ablate', smoke_config, '--checkpoints', ckpts, '--out', out]) == 2
    assert cli.main(['train', smoke_config, '--online', '--out', ckpts]) == 0
    assert cli.main(['ablate', smoke_config, '--checkpoints', ckpts, '--out', out]) == 0
    frame = _read(os.path.join(out, 'ablation.csv'))
    assert len(frame) == 8
    assert set(frame['variant']) == {'full', 'no_cd_no_buffer', 'random_theta', 'baseline'}
    assert sorted(set(frame['steps'])) == [1, 3]

def test_check_grad():
    assert cli.main(['check', '--grad', '--seeds', '3']) == 0
    with core.perturb_adjoint('sin', 2.0):
        assert cli.main(['check', '--grad', '--seeds', '3']) == 1
