"""Image-inversion hyperparameters: Z and X share a dimension, reconstruction
is l2 plus a feature term."""
from copy import deepcopy

from ..utils import nested_update
from .base import config as base

config = nested_update(deepcopy(base), {
    'model': {'kind': 'mini_decoder', 'd_x': 16, 'd_y': 64, 'hidden': 64},
    'mapping': {'d_z': 16, 'hidden': 1024},
    'objective': {'kind': 'l2_plus_feature', 'feature_weight': 1.0},
    'train': {'n_buffers': 500, 'n_samples': 256, 'n_steps': 20, 'lr_z': 0.1, 'lr_theta': 1e-4,
              'weight_decay': 0.1},
    'inference': {'steps': 20, 'lr': 0.1},
})
