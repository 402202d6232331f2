"""Every key a config may set. Presets and user files override these."""

config = {
    'seed': 0,
    'model': {
        'kind': 'rugged_decoder',  # rugged_decoder | mini_decoder | additive_correction
        'd_x': 2,
        'd_y': 8,
        # rugged decoder
        'd_hidden': 16,
        'frequency': 3.0,
        'amplitude': 1.0,
        'linear': 0.3,
        # mini decoder, fitted on a synthetic dataset
        'hidden': 32,
        'n_data': 256,
        'epochs': 1000,
        'lr': 1e-2,
        'noise': 0.01,
        # additive correction
        'wrapped': 'rugged_decoder',
        'anchor_sigma': 1.0,
        'decay': 1.0,
    },
    'mapping': {
        'd_z': 4,  # 2 * d_x
        'hidden': 64,
        'n_layers': 3,
        'slope': 0.2,
    },
    'objective': {
        'kind': 'l2',  # l2 | l2_plus_feature | task_plus_decay
        'mask': None,
        'feature_dim': None,
        'feature_weight': 1.0,
        'task': 'l2',
    },
    'train': {
        'n_buffers': 50,
        'n_samples': 64,
        'n_steps': 20,
        'lr_z': 0.1,
        'lr_theta': 1e-3,
        'z_optimizer': 'adam',
        'theta_optimizer': 'adamw',
        'weight_decay': 0.1,
        'init': 'zero',
        'init_sigma': 1.0,
        'batch_size': 1,
        'chunk_size': 64,
        'max_retries': 3,
        'divergence_factor': 1e6,
        'checkpoint_every': 10,
        'progress': False,
    },
    'inference': {
        'steps': 20,
        'optimizer': 'adam',
        'lr': 0.1,
        'init': 'zero',
        'sigma': 1.0,
        'hypotheses': 1,
        'divergence_factor': 1e6,
        'chunk_size': 64,
        'mask_mode': 'loss',  # loss | gradient
        'baseline_lrs': [],
    },
    'landscape': {
        'resolution': 41,
        'half_width_factor': 3.0,
        'n_starts': 4,
        'spike_factor': 2.0,
    },
    'ablation': {
        'steps': [20, 200],
    },
    'data': {
        'prior_sigma': 1.0,
        'noise_sigma': 0.0,
        'prior_shift': 0.0,
        'n_test': 100,
        'mask': None,
    },
}
