"""Smallest end-to-end run: one round, one trajectory, one step."""
from copy import deepcopy

from ..utils import nested_update
from .base import config as base

config = nested_update(deepcopy(base), {
    'mapping': {'hidden': 8},
    'train': {'n_buffers': 1, 'n_samples': 1, 'n_steps': 1, 'checkpoint_every': 1},
    'inference': {'steps': 3},
    'landscape': {'resolution': 5, 'n_starts': 2},
    'ablation': {'steps': [1, 3]},
    'data': {'n_test': 2},
})
