"""
Run Manifest Module

SHA-256 hashing of canonical run descriptions and the manifest/summary files
written next to every run directory, so a result can be traced back to the
exact spec, seed and code version that produced it.
"""
import hashlib
import json
import os
import platform
from datetime import datetime, timezone
from typing import Any, Dict, Optional

import logging

from config import RUN_FILES, __version__

logger = logging.getLogger(__name__)


def hash_entry(entry: Dict[str, Any]) -> str:
    """
    Create SHA-256 hash of a JSON-compatible entry

    Args:
        entry: Mapping to hash

    Returns:
        SHA-256 hash as hex string
    """
    # Sort keys for consistent hashing
    entry_str = json.dumps(entry, sort_keys=True, default=str)
    return hashlib.sha256(entry_str.encode("utf-8")).hexdigest()


def chain_entry(entry: Dict[str, Any], index: int,
                previous_hash: Optional[str] = None) -> Dict[str, Any]:
    """Attach a block reference and a chained hash to a log entry."""
    chained = entry.copy()
    chained["_block_ref"] = {
        "index": index,
        "previous_hash": previous_hash,
        "entry_hash": hash_entry(entry),
    }
    chained["_audit_hash"] = hash_entry(chained)
    return chained


def library_versions() -> Dict[str, str]:
    """Versions of the numerical stack, recorded for reproducibility."""
    import networkx
    import numpy
    import pydantic
    import scipy
    import sortedcontainers

    return {
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "networkx": networkx.__version__,
        "pydantic": pydantic.__version__,
        "sortedcontainers": sortedcontainers.__version__,
    }


def build_manifest(spec_description: Dict[str, Any], seed: int, replicates: int,
                   extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Build the manifest for a run

    Args:
        spec_description: Canonical, JSON-compatible description of the ModelSpec
        seed: Master seed
        replicates: Number of replicates
        extra: Additional fields (config path, command, ...)

    Returns:
        Manifest dictionary
    """
    manifest = {
        "spec_hash": hash_entry(spec_description),
        "spec": spec_description,
        "seed": int(seed),
        "replicates": int(replicates),
        "code_version": __version__,
        "libraries": library_versions(),
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(run_dir: str, manifest: Dict[str, Any]) -> str:
    """Write manifest.json; the creation time is kept out of the hashed spec."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, RUN_FILES["manifest"])
    payload = dict(manifest)
    payload["created_at"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=str)
    logger.info(f"Manifest written to {path}")
    return path


def write_summary(run_dir: str, summary: Dict[str, Any]) -> str:
    """Write the machine-readable summary.json of a run or verification."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, RUN_FILES["summary"])
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True, default=str)
    return path


def read_manifest(run_dir: str) -> Dict[str, Any]:
    path = os.path.join(run_dir, RUN_FILES["manifest"])
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
