import numpy as np
import pytest
import yaml

from loptlib import configs, core, experiment
from loptlib.configs import resolve_config

@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("LOPT_SEED", raising=False)

@pytest.mark.parametrize("preset", sorted(configs.CONFIGS))
def test_presets_resolve(preset):
    config = resolve_config(preset=preset)
    assert config['preset'] == preset
    exp = experiment.ExperimentConfig.from_dict(config)
    assert exp.train.seed == exp.inference.seed == config['seed']

def test_preset_values():
    desk = resolve_config(preset='rugged-desk')
    assert (desk['model']['d_x'], desk['model']['d_y'], desk['mapping']['d_z']) == (2, 8, 4)
    assert (desk['train']['n_buffers'], desk['train']['n_samples'], desk['train']['n_steps']) == (50, 64, 20)
    pose = resolve_config(preset='pose-like')
    assert pose['mapping']['d_z'] > pose['model']['d_x']
    assert pose['train']['n_steps'] == 200

def test_unknown_preset_and_key():
    with pytest.raises(core.ConfigError):
        configs.get_default_config('imagenet')
    with pytest.raises(core.ConfigError):
        resolve_config({'train': {'n_bufers': 3}})

def test_overrides():
    config = resolve_config({'preset': 'smoke', 'train.n_buffers': 3, 'train': {'lr_theta': '1e-4'},
                             'ablation': {'steps': ['2', 4.0]}})
    assert config['preset'] == 'smoke'
    assert config['train']['n_buffers'] == 3
    assert config['train']['lr_theta'] == 1e-4 and isinstance(config['train']['lr_theta'], float)
    assert config['ablation']['steps'] == [2, 4]

@pytest.mark.parametrize("override", [{'train': {'n_buffers': 2.5}}, {'train': {'progress': 'yes'}},
                                      {'seed': -1}, {'model': 'rugged'}, {'inference': {'lr': 'fast'}}])
def test_bad_values(override):
    with pytest.raises(core.ConfigError):
        resolve_config(override)

def test_env_seed(monkeypatch):
    monkeypatch.setenv("LOPT_SEED", "9")
    assert resolve_config({'seed': 3})['seed'] == 9

def test_round_trip():
    for preset in configs.CONFIGS:
        config = resolve_config({'preset': preset, 'seed': 5, 'objective': {'mask': '0:4'}})
        again = resolve_config(yaml.safe_load(configs.serialize_config(config)))
        assert again == config
        assert configs.config_hash(again) == configs.config_hash(config)

def test_config_hash_tracks_values():
    a = resolve_config({'seed': 1})
    b = resolve_config({'seed': 2})
    assert configs.config_hash(a) != configs.config_hash(b)
    assert len(configs.config_hash(a)) == 16

def test_load_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("preset: smoke\ntrain:\n  n_steps: 2\n")
    assert configs.load_config(str(path))['train']['n_steps'] == 2
    path.write_text("train: [1, 2\n")
    with pytest.raises(core.ConfigError):
        configs.load_config(str(path))
    path.write_text("- 1\n- 2\n")
    with pytest.raises(core.ConfigError):
        configs.load_config(str(path))
    with pytest.raises(OSError):
        configs.load_config(str(tmp_path / "missing.yaml"))
