"""Brute-force and finite-difference oracles.

Plain numpy on purpose: nothing here goes through Tensor or the adjoint
registry, so the oracles can referee them.
"""
from __future__ import annotations

import datetime as dt
import logging
import os
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from chex import dataclass

from . import utils
from .core import OracleError, ConfigError

logger = logging.getLogger(__name__)

def grid_minimize(fn: Callable[[np.ndarray], Any], box: Sequence[Tuple[float, float]], resolution: int = 101,
                  vectorized: bool = True, chunk_size: int = 65536, threads: int = 1) -> Tuple[np.ndarray, float]:
    """exhaustive search over a uniform grid on box; ties go to the
    lexicographically smallest vertex. Non-finite values never win."""
    if resolution < 11:
        raise ConfigError(f"grid oracle resolution must be >= 11, got {resolution}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    # ij ordering flattens in lexicographic order, so argmin picks the smallest tied point
    points = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing='ij')], axis=1)
    if vectorized:
        evaluate = lambda idx: np.asarray(fn(points[idx]), dtype=np.float64).reshape(-1)
    else:
        evaluate = lambda idx: np.array([float(fn(p)) for p in points[idx]])
    values = np.concatenate(utils.parallel_map(evaluate, utils.chunks(len(points), chunk_size), threads))
    values = np.where(np.isfinite(values), values, np.inf)
    best = int(np.argmin(values))
    return points[best], float(values[best])

def finite_diff(fn: Callable[[np.ndarray], float], point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """central differences, one coordinate at a time"""
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty_like(point)
    flat = grad.reshape(-1)
    for i in range(point.size):
        e = np.zeros(point.size)
        e[i] = step
        e = e.reshape(point.shape)
        hi, lo = float(fn(point + e)), float(fn(point - e))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise OracleError(f"non-finite sample at coordinate {i} around {point.reshape(-1)[i]}")
        flat[i] = (hi - lo) / (2 * step)
    return grad

def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """inf-norm difference over the larger inf-norm (at least floor)"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)

# =========================
# Fixture records
# =========================

@dataclass(frozen=True)
class OracleRecord:
    name: str
    inputs: Dict[str, Any]
    expected: Dict[str, np.ndarray]
    tolerance: float
    created: str = ''

def make_record(name: str, inputs: Dict[str, Any], expected: Dict[str, Any], tolerance: float) -> OracleRecord:
    stamp = dt.datetime.now(dt.timezone.utc).isoformat(timespec='seconds')
    return OracleRecord(name=name, inputs=dict(inputs), tolerance=float(tolerance), created=stamp,
                        expected={k: np.asarray(v, dtype=np.float64) for k, v in expected.items()})

class OracleStore:
    """write-once collection of oracle records in one lopt-fixture-v1 file"""
    def __init__(self, path: str):
        self.path = path
        self.records: Dict[str, OracleRecord] = {}
        if os.path.exists(path):
            self._load()

    def _load(self) -> None:
        arrays, meta = utils.load_container(self.path, utils.FIXTURE_VERSION)
        for name, entry in (meta.get('records') or {}).items():
            expected = {k: arrays[f"{name}.{k}"] for k in entry['keys']}
            self.records[name] = OracleRecord(name=name, inputs=entry['inputs'], expected=expected,
                                              tolerance=float(entry['tolerance']), created=entry['created'])

    def __contains__(self, name: str) -> bool:
        return name in self.records

    def get(self, name: str) -> OracleRecord:
        if name not in self.records:
            raise OracleError(f"no oracle record named {name} in {self.path}")
        return self.records[name]

    def add(self, record: OracleRecord) -> None:
        if record.name in self.records:
            raise OracleError(f"oracle record {record.name} already exists; records are write-once")
        self.records[record.name] = record

    def save(self) -> None:
        arrays, meta = {}, {}
        for name, rec in sorted(self.records.items()):
            arrays.update({f"{name}.{k}": v for k, v in rec.expected.items()})
            meta[name] = {'inputs': rec.inputs, 'tolerance': rec.tolerance, 'created': rec.created,
                          'keys': sorted(rec.expected)}
        utils.save_container(self.path, arrays, version=utils.FIXTURE_VERSION, meta={'records': meta})
        logger.info(f"saved {len(self.records)} oracle records to {self.path}")
