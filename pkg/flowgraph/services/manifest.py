"""
Run manifests: resolved config, seed, checkpoint hash, library versions and host details
"""

import hashlib
import json
import logging
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional

import psutil

from flowgraph.core.config import settings
from flowgraph.core.exceptions import ArtifactIOError
from flowgraph.models.report import RunManifest

logger = logging.getLogger(__name__)

TRACKED_PACKAGES = ("torch", "numpy", "scipy", "networkx", "pydantic", "pydantic-settings", "psutil")


def library_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


def system_info() -> Dict[str, Any]:
    """Host details, as reported by the detailed health check of a service"""
    memory = psutil.virtual_memory()
    return {
        "platform": platform.platform(),
        "cpu_count": psutil.cpu_count(logical=True),
        "memory_total_mb": memory.total // (1024 * 1024),
        "memory_available_mb": memory.available // (1024 * 1024),
    }


def default_threads() -> int:
    if settings.FLOWGRAPH_THREADS:
        return settings.FLOWGRAPH_THREADS
    return psutil.cpu_count(logical=True) or 1


def build_manifest(
    command: str,
    seed: int,
    config: Dict[str, Any],
    checkpoint_hash: Optional[str] = None,
    outputs: Optional[List[str]] = None,
) -> RunManifest:
    return RunManifest(
        command=command,
        format_version=settings.FORMAT_VERSION,
        seed=seed,
        config=config,
        checkpoint_hash=checkpoint_hash,
        outputs=outputs or [],
        versions=library_versions(),
        system=system_info(),
    )


def manifest_hash(manifest: RunManifest) -> str:
    """sha256 over the fields that determine a run's outputs"""
    payload = manifest.model_dump(
        mode="json", include={"command", "format_version", "seed", "config", "checkpoint_hash"}
    )
    # outputs are independent of the worker count
    payload["config"].pop("threads", None)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def write_manifest(manifest: RunManifest, output) -> Path:
    path = manifest_path(output)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write manifest {path}: {str(e)}")
        raise ArtifactIOError(f"cannot write manifest: {e.strerror}", {"path": str(path)})
    logger.info(f"Manifest written to {path}")
    return path
