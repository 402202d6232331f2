"""lopt: train, infer, landscape, ablate and check from the command line.

Exit codes: 0 ok, 1 failed check, 2 bad config / input / dimensions,
3 I/O error, 4 divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from . import analysis, checks, configs, core, experiment, inference, oracles, trainer, utils
from .objectives import Observation

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4

def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path

def _observations(path: str, d_y: int, mask: Optional[str] = None) -> List[Observation]:
    ys = utils.read_observations(path)
    if ys.shape[1] != d_y:
        raise core.DimensionError(f"{path}: observations have dim {ys.shape[1]}, the forward model outputs {d_y}")
    mask_arr = utils.parse_mask(mask, d_y)
    return [Observation(y=y, mask=mask_arr) for y in ys]

# =========================
# train
# =========================

def cmd_train(args) -> int:
    config = configs.load_config(args.config)
    exp = experiment.ExperimentConfig.from_dict(config, out_dir=_ensure_dir(args.out))
    hash_ = configs.config_hash(config)
    variant = 'no_cd_no_buffer' if args.online else 'full'
    model = experiment.build_model(config)
    obj = experiment.build_objective(config, model)
    theta0 = experiment.build_mapping(config, model.in_dim)
    sampler = experiment.build_sampler(config, model)
    cfg = exp.train
    logger.info(f"training {variant} on preset {config['preset']}: B={cfg.n_buffers} N={cfg.n_samples} "
                f"T={cfg.n_steps}, config hash {hash_}")

    def checkpoint(b, theta, state, rounds):
        done = b + 1
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.n_buffers:
            path = os.path.join(exp.out_dir, f"{variant}-round-{done:04d}.yaml")
            experiment.save_checkpoint(path, theta, state, done, model, config)

    if args.online:
        result = trainer.online_train(theta0, model, obj, sampler, cfg, callback=checkpoint)
    else:
        result = trainer.coordinate_descent_train(theta0, model, obj, sampler, cfg, callback=checkpoint,
                                                  threads=args.threads)
    experiment.save_checkpoint(os.path.join(exp.out_dir, f"{variant}.yaml"), result.theta, result.optimizer,
                               cfg.n_buffers, model, config)
    utils.write_csv(result.to_frame(), os.path.join(exp.out_dir, f"{variant}-rounds.csv"), hash_)
    return EXIT_OK

# =========================
# infer
# =========================

def _reconstruction_frame(traces: List[inference.InferenceTrace], model) -> pd.DataFrame:
    y_hat = model.evaluate(np.stack([tr.x_hat for tr in traces]))
    frame = pd.DataFrame({'hypothesis': np.arange(len(traces)), 'seed': [tr.seed for tr in traces],
                          'final_loss': [tr.final_loss for tr in traces]})
    for j in range(y_hat.shape[1]):
        frame[f"y{j}"] = y_hat[:, j]
    return frame

def _run_seed(ckpt: experiment.Checkpoint) -> int:
    """LOPT_SEED overrides the checkpoint seed for inference draws; the model
    and objective keep the seed they were trained with"""
    return utils.env_seed(int(ckpt.config['seed']))

def cmd_infer(args) -> int:
    ckpt = experiment.load_checkpoint(args.checkpoint)
    config, model, seed = ckpt.config, ckpt.model, _run_seed(ckpt)
    hash_ = configs.config_hash({**config, 'seed': seed})
    out = _ensure_dir(args.out)
    obj = experiment.build_objective(config, model)
    observations = _observations(args.observations, model.out_dim, args.mask)
    overrides = {'seed': seed}
    if args.steps:
        overrides['steps'] = args.steps
    if args.hypotheses is not None:
        if args.baseline:
            raise core.ConfigError("--hypotheses runs mapped inference and cannot be combined with --baseline")
        overrides['hypotheses'] = args.hypotheses
        if args.hypotheses >= 2 and config['inference']['init'] == 'zero':
            logger.info("switching to gaussian init so hypotheses start apart")
            overrides['init'] = 'gaussian'
    cfg = experiment.inference_config(config, **overrides)

    if args.hypotheses is not None:
        for i, obs in enumerate(observations):
            traces = inference.infer_multi(ckpt.theta, model, obj, obs, cfg, threads=args.threads)
            for h, trace in enumerate(traces):
                utils.write_csv(trace.to_frame(), os.path.join(out, f"obs-{i:04d}-h{h:02d}.csv"), hash_)
            utils.write_csv(_reconstruction_frame(traces, model), os.path.join(out, f"recon-obs-{i:04d}.csv"), hash_)
        return EXIT_OK

    mode = 'baseline' if args.baseline else 'mapped'
    theta = None if args.baseline else ckpt.theta
    traces = inference.infer_many(theta, model, obj, observations, cfg, threads=args.threads)
    for i, trace in enumerate(traces):
        utils.write_csv(trace.to_frame(), os.path.join(out, f"obs-{i:04d}-{mode}.csv"), hash_)
    curves = analysis.convergence_curves(traces)
    utils.write_csv(curves, os.path.join(out, f"curves-{mode}.csv"), hash_)
    logger.info(f"{mode}: mean loss {curves['mean'].iloc[0]:.4e} -> {curves['mean'].iloc[-1]:.4e} "
                f"over {len(traces)} observations")
    return EXIT_OK

# =========================
# landscape
# =========================

def cmd_landscape(args) -> int:
    ckpt = experiment.load_checkpoint(args.checkpoint)
    config, model, seed = ckpt.config, ckpt.model, _run_seed(ckpt)
    hash_ = configs.config_hash({**config, 'seed': seed})
    out = _ensure_dir(args.out)
    obj = experiment.build_objective(config, model)
    observations = _observations(args.observations, model.out_dim)
    spec = config['landscape']
    cfg = experiment.inference_config(config, seed=seed)
    pairs = analysis.paired_landscapes(ckpt.theta, model, obj, observations, cfg,
                                       resolution=spec['resolution'], half_width_factor=spec['half_width_factor'],
                                       n_starts=spec['n_starts'], threads=args.threads)
    summary = []
    for i, grids in enumerate(pairs):
        for space, grid in zip(('x', 'z'), grids):
            utils.write_csv(grid.to_frame(), os.path.join(out, f"grid-obs-{i:04d}-{space}.csv"), hash_)
            summary.append({'observation': i, 'space': space,
                            'spike_count': analysis.spike_count(grid, spec['spike_factor']),
                            'laplacian_energy': analysis.laplacian_energy(grid),
                            'min_is_interior': grid.min_is_interior()})
    frame = pd.DataFrame(summary)
    utils.write_csv(frame, os.path.join(out, 'landscape-summary.csv'), hash_)
    means = frame.groupby('space')['spike_count'].mean()
    logger.info(f"mean spike count: X {means.get('x', np.nan):.2f}, Z {means.get('z', np.nan):.2f}")
    return EXIT_OK

# =========================
# ablate
# =========================

def cmd_ablate(args) -> int:
    config = configs.load_config(args.config)
    hash_ = configs.config_hash(config)
    out = _ensure_dir(args.out)
    paths = {v: os.path.join(args.checkpoints, f"{v}.yaml") for v in ('full', 'no_cd_no_buffer')}
    missing = [p for p in paths.values() if not os.path.exists(p)]
    if missing:
        raise core.InputError(f"missing ablation checkpoints: {missing}")
    full, no_cd = (experiment.load_checkpoint(p) for p in paths.values())
    model = full.model
    obj = experiment.build_objective(config, model)
    steps = [int(s) for s in args.steps.split(',')] if args.steps else None
    cfg = experiment.inference_config(config)
    baseline_lr = None
    if config['inference']['baseline_lrs']:
        baseline_lr, sweep = analysis.sweep_baseline_lr(model, obj, experiment.heldout_observations(config, model),
                                                        cfg, config['inference']['baseline_lrs'], threads=args.threads)
        utils.write_csv(sweep, os.path.join(out, 'baseline-lr-sweep.csv'), hash_)
    suite = experiment.ablation_suite(config, model, full.theta, no_cd.theta, steps=steps, baseline_lr=baseline_lr)
    report = analysis.run_ablation(suite, model, obj, cfg, threads=args.threads)
    utils.write_csv(report.to_frame(), os.path.join(out, 'ablation.csv'), hash_)
    print(report.table.to_string())
    for step in suite.steps:
        gain = analysis.relative_improvement(report, 'full', 'baseline', step)
        logger.info(f"full vs baseline at {step} steps: {gain:.1f}% lower loss")
    return EXIT_OK

# =========================
# check
# =========================

def cmd_check(args) -> int:
    if args.grad:
        report = checks.gradient_check_suite(n_seeds=args.seeds)
    else:
        store = oracles.OracleStore(args.record) if args.record else None
        report = checks.grid_oracle_suite(store=store)
        if store is not None:
            store.save()
    print(report.to_string(index=False))
    failed = report[~report['passed']]
    if len(failed):
        logger.error(f"{len(failed)} checks failed: {', '.join(failed['check'])}")
        return EXIT_CHECK
    return EXIT_OK

# =========================
# entry point
# =========================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lopt', description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    parser.add_argument('--threads', type=int, default=utils.default_threads(),
                        help='worker threads; results do not depend on it')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='learn a mapping network θ')
    p.add_argument('config')
    p.add_argument('--online', action='store_true', help='interleave z and θ steps, no replay buffer')
    p.add_argument('--out', default='out')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('infer', help='optimization-based inference on an observations csv')
    p.add_argument('checkpoint')
    p.add_argument('observations')
    mode = p.add_mutually_exclusive_group()
    mode.add_argument('--baseline', action='store_true', help='descend in X')
    mode.add_argument('--mapped', action='store_true', help='descend in Z through θ (default)')
    p.add_argument('--hypotheses', type=int, default=None)
    p.add_argument('--mask', default=None, help='observed entries: 1100, 0,1,5 or 0:16')
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--out', default='out')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('landscape', help='paired X/Z loss-landscape grids')
    p.add_argument('checkpoint')
    p.add_argument('observations')
    p.add_argument('--out', default='out')
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser('ablate', help='full vs no_cd_no_buffer vs random_theta vs baseline')
    p.add_argument('config')
    p.add_argument('--checkpoints', required=True, help='directory holding full.yaml and no_cd_no_buffer.yaml')
    p.add_argument('--steps', default=None, help='comma separated step counts, e.g. 20,200')
    p.add_argument('--out', default='out')
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('check', help='gradient and grid-oracle self checks')
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument('--grad', action='store_true')
    which.add_argument('--oracle', action='store_true')
    p.add_argument('--seeds', type=int, default=100)
    p.add_argument('--record', default=None, help='oracle fixture file to add new records to')
    p.set_defaults(func=cmd_check)
    return parser

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    try:
        return args.func(args)
    except core.DivergenceError as e:
        logger.error(f"diverged: {e}")
        return EXIT_DIVERGED
    except core.LoptError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"i/o error: {e}")
        return EXIT_IO

if __name__ == '__main__':
    sys.exit(main())
