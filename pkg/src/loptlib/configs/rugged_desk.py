"""Desk-scale landscape learning on the 2-d rugged decoder."""
from copy import deepcopy

from ..utils import nested_update
from .base import config as base

config = nested_update(deepcopy(base), {
    'model': {'kind': 'rugged_decoder', 'd_x': 2, 'd_y': 8, 'd_hidden': 16, 'frequency': 3.0},
    'mapping': {'d_z': 4, 'hidden': 64},
    'train': {'n_buffers': 50, 'n_samples': 64, 'n_steps': 20, 'lr_z': 0.1, 'lr_theta': 1e-3},
    'inference': {'steps': 20, 'lr': 0.1},
    'data': {'prior_sigma': 1.5, 'n_test': 100},
})
