"""
Shared plumbing for subcommands: config files, flag overrides and inputs
"""

import argparse
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError as PydanticValidationError

from flowgraph.core.exceptions import ArtifactIOError, ValidationError
from flowgraph.models.config import RunConfig
from flowgraph.services.datasets import read_graphs
from flowgraph.services.graphs import Graph
from flowgraph.services.manifest import default_threads
from flowgraph.services.prior import Prior, empirical_prior, load_prior

# argparse dests of the form "section.field" override RunConfig.section.field;
# plain dests listed here override top-level RunConfig fields
TOP_LEVEL = (
    "data", "prior", "checkpoint", "output", "samples", "reference", "training_set", "threads",
)


def option(parser: argparse.ArgumentParser, flag: str, dest: str, **kwargs) -> None:
    """Add a flag whose default is None so that unset flags never override the config file"""
    parser.add_argument(flag, dest=dest, default=None, **kwargs)


def add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON run config; flags override its values")
    option(parser, "--threads", "threads", type=int, help="Worker threads (default: available cores)")


def _set(target: Dict[str, Any], dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    for key in parents:
        target = target.setdefault(key, {})
    target[leaf] = value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: Dict[str, Any] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ArtifactIOError(f"cannot read config: {e.strerror}", {"path": str(path)})
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e.msg}", {"path": str(path), "line": e.lineno})
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object", {"path": str(path)})

    for dest, value in vars(args).items():
        if value is None:
            continue
        if "." in dest or dest in TOP_LEVEL:
            _set(data, dest, value)

    try:
        return RunConfig.model_validate(data)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid run config: {str(e)}")


def resolve_threads(cfg: RunConfig) -> int:
    return cfg.threads or default_threads()


def require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ValidationError(f"missing required input {flag}")
    return value


def load_graphs(path: Optional[str], flag: str) -> List[Graph]:
    return read_graphs(require(path, flag))


def resolve_prior(cfg: RunConfig) -> Prior:
    """Prior file when given, else the empirical prior of the training data"""
    if cfg.prior:
        return load_prior(cfg.prior)
    if cfg.data:
        return empirical_prior(read_graphs(cfg.data))
    raise ValidationError("a prior is needed: pass --prior or --data")


def parse_params(pairs: Optional[List[str]]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValidationError("reward parameters must look like key=value", {"got": pair})
        try:
            params[key] = float(value)
        except ValueError:
            raise ValidationError("reward parameter is not a number", {"key": key, "value": value})
    return params
