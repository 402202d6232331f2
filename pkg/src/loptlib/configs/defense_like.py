"""Additive-correction hyperparameters: r = θ(z) is added to a fixed input
and penalised by decay * ||r||^2; searches start from a random z."""
from copy import deepcopy

from ..utils import nested_update
from .base import config as base

config = nested_update(deepcopy(base), {
    'model': {'kind': 'additive_correction', 'wrapped': 'mini_decoder', 'd_x': 3072, 'd_y': 10,
              'hidden': 64, 'decay': 1.0},
    'mapping': {'d_z': 3072, 'hidden': 3072},
    'objective': {'kind': 'task_plus_decay', 'task': 'l2'},
    'train': {'n_buffers': 70, 'n_samples': 5120, 'n_steps': 5, 'lr_z': 0.2 / 255, 'lr_theta': 1e-4,
              'weight_decay': 0.1, 'init': 'gaussian'},
    'inference': {'steps': 5, 'lr': 0.2 / 255, 'init': 'gaussian'},
})
