import networkx as nx
import numpy as np
import pytest

from flowgraph.core.config import settings
from flowgraph.models.config import ModelConfig
from flowgraph.services.graphevo import build_model
from flowgraph.services.graphs import Graph, graph_from_key
from flowgraph.services.prior import empirical_prior


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch):
    """No log file, no environment seed or thread overrides"""
    monkeypatch.setattr(settings, "LOG_FILE", "")
    monkeypatch.setattr(settings, "FLOWGRAPH_SEED", None)
    monkeypatch.setattr(settings, "FLOWGRAPH_THREADS", None)


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(n_layers=1, n_heads=2, dx=8, de=4, dy=8, dropout=0.0, time_embedding_dim=4)


@pytest.fixture
def tiny_cfg64(tiny_cfg) -> ModelConfig:
    return tiny_cfg.model_copy(update={"float64": True})


@pytest.fixture
def labeled_graphs():
    """Small two-category graphs of three and four nodes"""
    return [
        graph_from_key(((0, 1, 1), (1, 0, 1))),
        graph_from_key(((1, 1, 0), (0, 1, 1))),
        graph_from_key(((0, 0, 1, 1), (1, 0, 0, 1, 0, 1))),
        graph_from_key(((1, 0, 1, 0), (0, 1, 1, 0, 1, 0))),
        graph_from_key(((0, 1, 0, 1), (1, 1, 1, 0, 0, 0))),
    ]


@pytest.fixture
def labeled_prior(labeled_graphs):
    return empirical_prior(labeled_graphs, 2, 2)


@pytest.fixture
def tiny_model(tiny_cfg):
    return build_model(2, 2, tiny_cfg, seed=0)


@pytest.fixture
def tiny_model64(tiny_cfg64):
    return build_model(2, 2, tiny_cfg64, seed=0)


@pytest.fixture
def star5() -> Graph:
    return Graph.from_networkx(nx.star_graph(4))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
