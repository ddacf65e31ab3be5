"""
Checkpoint files: a directory holding ``params.npz`` with every parameter
array and Adam moment, and ``checkpoint.json`` with the format version and
caller metadata. Arrays round-trip bit-exactly.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .autograd import ParamStore
from .exceptions import CheckpointError


logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
PARAMS_FILE = "params.npz"
META_FILE = "checkpoint.json"


def save_checkpoint(
    directory: Union[str, Path],
    stores: Dict[str, ParamStore],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    arrays = {}
    for store_name, store in stores.items():
        if "/" in store_name:
            raise CheckpointError(f"Store name {store_name!r} must not contain '/'")
        for key, value in store.state_dict().items():
            arrays[f"{store_name}/{key}"] = value
    np.savez(directory / PARAMS_FILE, **arrays)

    meta = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "stores": sorted(stores),
        "fingerprints": {name: store.fingerprint() for name, store in stores.items()},
        "metadata": metadata or {},
    }
    with open(directory / META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)

    logger.info(f"Checkpoint written to {directory}")
    return directory


def load_checkpoint(directory: Union[str, Path]) -> Tuple[Dict[str, ParamStore], Dict[str, Any]]:
    """Return ``(stores, metadata)``."""
    directory = Path(directory)
    meta_path, params_path = directory / META_FILE, directory / PARAMS_FILE
    if not meta_path.is_file() or not params_path.is_file():
        raise CheckpointError(f"No checkpoint at {directory}", details={"path": str(directory)})

    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {meta.get('version')!r}",
            details={"expected": CHECKPOINT_FORMAT_VERSION},
        )

    grouped: Dict[str, Dict[str, np.ndarray]] = {name: {} for name in meta["stores"]}
    with np.load(params_path) as data:
        for key in data.files:
            store_name, _, rest = key.partition("/")
            grouped.setdefault(store_name, {})[rest] = data[key]

    stores = {name: ParamStore.from_state_dict(state) for name, state in grouped.items()}
    for name, expected in meta.get("fingerprints", {}).items():
        if stores[name].fingerprint() != expected:
            raise CheckpointError(f"Fingerprint mismatch for store {name!r}")
    return stores, meta.get("metadata", {})
