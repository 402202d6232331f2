from __future__ import annotations

import hashlib
import zlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
import yaml
import jax.tree_util as tu
from toolz import partition_all

from . import core

logger = logging.getLogger(__name__)

WEIGHTS_VERSION = "lopt-weights-v1"
CHECKPOINT_VERSION = "lopt-ckpt-v1"
FIXTURE_VERSION = "lopt-fixture-v1"

# ====================
# Random utilities
# ====================
# Every random draw goes through a PRNGKey so that a run depends only on
# its seed and never on call order or on global numpy state. A key is a
# (possibly nested) tuple of ints; split / fold_in derive child keys.

class PRNGKey:
    """same key always produces the same numbers and never affects other keys"""
    def __init__(self, key):
        self.key = key

    def seed_sequence(self) -> np.random.SeedSequence:
        entropy = _encode_key(self.key)
        # length suffix: SeedSequence zero-pads, so [a, b] and [a, b, 0] would collide
        return np.random.SeedSequence(entropy + [len(entropy)])

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())

    def split(self, n=2) -> List["PRNGKey"]:
        """split the key into n keys. Used tuple to avoid collisions"""
        return [PRNGKey((self.key, i)) for i in range(n)]

    def fold_in(self, data: int) -> "PRNGKey":
        return PRNGKey((self.key, int(data)))

    def __repr__(self):
        return f"PRNGKey({self.key!r})"

def _encode_key(key) -> List[int]:
    """prefix code of the key tree: leaf -> [0, k], node -> [1, len, *children].
    ((a, b), c) and (a, b, c) therefore give different entropy."""
    if isinstance(key, (tuple, list)):
        out = [1, len(key)]
        for k in key:
            out.extend(_encode_key(k))
        return out
    leaf = tu.tree_leaves(key)
    if len(leaf) != 1 or int(leaf[0]) < 0:
        raise ValueError(f"PRNGKey entries must be non-negative ints, got {key!r}")
    return [0, int(leaf[0])]

def named_key(seed: int, name: str) -> PRNGKey:
    """key for one named stream of an experiment (model, test, train, ...)"""
    return PRNGKey((int(seed), zlib.crc32(name.encode("utf-8"))))

def uniform(key: PRNGKey, low=0.0, high=1.0, size=None):
    return key.generator().uniform(low, high, size)

def normal(key: PRNGKey, scale=1.0, size=None):
    return key.generator().normal(0.0, scale, size)

def integers(key: PRNGKey, low, high=None, size=None):
    return key.generator().integers(low, high, size)

def env_seed(default: int) -> int:
    """LOPT_SEED overrides the configured seed"""
    value = os.environ.get("LOPT_SEED")
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise core.ConfigError(f"LOPT_SEED must be an integer, got {value!r}")

# ====================
# Masks
# ====================

def mask2ranges(mask):
    # handle a bunch of special cases first
    if len(mask) == 0: return np.empty((0, 2), dtype=int)
    if np.all(mask): return np.array([[0, len(mask)]], dtype=int)
    if not np.any(mask): return np.empty((0, 2), dtype=int)
    # general case
    bounds = np.where(np.diff(mask) != 0)[0] + 1  # 1 to n-1
    bounds = np.concatenate(([0], bounds, [len(mask)]))  # 0 to n
    bounds = np.vstack((bounds[:-1], bounds[1:])).T # [[(0 to n-1), (1 to n)], ...]
    return bounds[mask[bounds[:, 0]] == 1]

def ranges2mask(ranges, imax):
    mask = np.zeros(imax, dtype=bool)
    for i_left, i_right in ranges:
        mask[i_left:i_right] = True
    return mask

def parse_mask(literal: Union[str, Sequence[int], None], length: int) -> Optional[np.ndarray]:
    """mask literal -> boolean vector. Accepted forms: bitstring ("1100"),
    index list ("0,1,5" or [0, 1, 5]) and ranges ("0:16,20:24")."""
    if literal is None:
        return None
    if not isinstance(literal, str):
        indices = [int(i) for i in literal]
        return _indices2mask(indices, length)
    text = literal.strip().replace(" ", "")
    if text and set(text) <= {"0", "1"} and len(text) == length:
        return np.array([c == "1" for c in text], dtype=bool)
    try:
        if ":" in text:
            ranges = [tuple(int(v) for v in part.split(":")) for part in text.split(",") if part]
            if any(len(r) != 2 or r[0] < 0 or r[1] > length or r[0] >= r[1] for r in ranges):
                raise core.ConfigError(f"mask ranges {literal!r} out of bounds for length {length}")
            return ranges2mask(ranges, length)
        return _indices2mask([int(v) for v in text.split(",") if v], length)
    except ValueError as e:
        if isinstance(e, core.ConfigError):
            raise
        raise core.ConfigError(f"cannot parse mask literal {literal!r}")

def _indices2mask(indices: List[int], length: int) -> np.ndarray:
    if any(i < 0 or i >= length for i in indices):
        raise core.ConfigError(f"mask indices {indices} out of bounds for length {length}")
    mask = np.zeros(length, dtype=bool)
    mask[indices] = True
    return mask

def format_mask(mask: Optional[np.ndarray]) -> Optional[str]:
    """inverse of parse_mask, in the compact ranges form"""
    if mask is None:
        return None
    return ",".join(f"{l}:{r}" for l, r in mask2ranges(np.asarray(mask, dtype=bool)))

# ====================
# Config helpers
# ====================

def load_config(config_file=None):
    """yaml config file loader"""
    if not config_file: return {}
    with open(config_file, 'r') as file:
        config_data = yaml.safe_load(file)
    if config_data is None:
        config_data = {}
    return config_data

def nested_update(dictionary, update_dict, new_keys_allowed=False):
    """update a nested dictionary recursively; unknown keys are an error
    unless new_keys_allowed"""
    for key, value in update_dict.items():
        if key in dictionary and isinstance(dictionary[key], dict) and isinstance(value, dict):
            nested_update(dictionary[key], value, new_keys_allowed=new_keys_allowed)
        elif key in dictionary or new_keys_allowed:
            dictionary[key] = value
        else:
            raise core.ConfigError(f"unknown config key: {key}")
    return dictionary

def flatten_dict(tree: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    """{'a': {'b': 1}} -> {'a.b': 1}"""
    flat = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict) and value:
            flat.update(flatten_dict(value, prefix=f"{path}."))
        else:
            flat[path] = value
    return flat

def unflatten_dict(flat: Dict[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for path, value in flat.items():
        node = tree
        *parents, leaf = str(path).split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise core.ConfigError(f"config key {path} conflicts with a scalar entry")
        if isinstance(value, dict):
            node.setdefault(leaf, {})
            nested_update(node[leaf], value, new_keys_allowed=True)
        else:
            node[leaf] = value
    return tree

def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

# ====================
# Named-array containers
# ====================

path2key = lambda path: ".".join([str(getattr(p, "key", getattr(p, "name", getattr(p, "idx", p)))) for p in path])

def tree2arrays(tree: Any) -> Dict[str, np.ndarray]:
    """flatten a nested dict/list of arrays or tensors into {dotted.path: array}"""
    leaves = tu.tree_flatten_with_path(tree, is_leaf=core.is_tensor)[0]
    return {path2key(path): np.asarray(leaf.values if core.is_tensor(leaf) else leaf, dtype=np.float64)
            for path, leaf in leaves}

_Dumper = getattr(yaml, "CSafeDumper", yaml.SafeDumper)
_Loader = getattr(yaml, "CSafeLoader", yaml.SafeLoader)

def save_container(path: str, arrays: Dict[str, np.ndarray], version: str = WEIGHTS_VERSION,
                   meta: Optional[Dict[str, Any]] = None) -> None:
    """write named arrays as structured text; floats keep full repr precision"""
    doc = {
        "version": version,
        "meta": meta or {},
        "arrays": {name: {"shape": list(np.shape(a)),
                          "values": [float(v) for v in np.ravel(np.asarray(a, dtype=np.float64))]}
                   for name, a in arrays.items()},
    }
    with open(path, "w") as f:
        yaml.dump(doc, f, Dumper=_Dumper, default_flow_style=None, sort_keys=True, width=120)
    logger.debug(f"wrote {version} container with {len(arrays)} arrays to {path}")

def load_container(path: str, version: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    with open(path, "r") as f:
        doc = yaml.load(f, Loader=_Loader)
    if not isinstance(doc, dict) or "version" not in doc:
        raise core.InputError(f"{path} is not a lopt container")
    if version is not None and doc["version"] != version:
        raise core.InputError(f"{path}: expected version {version}, found {doc['version']}")
    arrays = {}
    for name, entry in (doc.get("arrays") or {}).items():
        values = np.asarray(entry["values"], dtype=np.float64)
        arrays[name] = values.reshape(entry["shape"])
    return arrays, doc.get("meta") or {}

# ====================
# CSV helpers
# ====================

def write_csv(frame: pd.DataFrame, path: str, hash_: str) -> None:
    """csv with a leading config-hash comment line and a header row"""
    with open(path, "w") as f:
        f.write(f"# config-hash: {hash_}\n")
        frame.to_csv(f, index=False, float_format="%.17g")

def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")

def read_observations(path: str) -> np.ndarray:
    """observation file: one row per observation, numeric columns only"""
    try:
        frame = read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise core.InputError(f"cannot read observations from {path}: {e}")
    if frame.empty:
        raise core.InputError(f"{path} holds no observations")
    try:
        return frame.to_numpy(dtype=np.float64)
    except ValueError:
        raise core.InputError(f"{path} holds non-numeric observation values")

# ====================
# Parallel helpers
# ====================

T = TypeVar("T")

def chunks(n: int, chunk_size: int) -> List[np.ndarray]:
    """fixed-size index chunks: the partition never depends on thread count"""
    return [np.asarray(c, dtype=int) for c in partition_all(max(1, chunk_size), range(n))]

def parallel_map(fn: Callable[..., T], items: Iterable[Any], threads: int = 1) -> List[T]:
    """ordered map, optionally over a thread pool"""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))

def default_threads() -> int:
    return max(1, (os.cpu_count() or 2) // 2)
