import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from banzhaf_cfe.datasets import DatasetKind, DatasetSpec, generate  # noqa: E402
from banzhaf_cfe.gcn import TrainConfig, train  # noqa: E402


@pytest.fixture(scope="session")
def small_tree_cycles():
    """A 111-node TREE-CYCLES graph (63-node tree, 8 cycles)."""
    return generate(DatasetSpec.default(DatasetKind.TREE_CYCLES, seed=3, base_size=63, motif_count=8))


@pytest.fixture(scope="session")
def small_model(small_tree_cycles):
    """A 2-layer GCN trained briefly on ``small_tree_cycles``."""
    return train(small_tree_cycles, 2, TrainConfig(epochs=500, restarts=1, seed=1)).model


@pytest.fixture(scope="session")
def small_ba_shapes():
    return generate(DatasetSpec.default(DatasetKind.BA_SHAPES, seed=5, base_size=60, motif_count=6))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tree_cycles_trained():
    """Default TREE-CYCLES graph with the default 2-layer model (about 3 s to train)."""
    g = generate(DatasetSpec.default(DatasetKind.TREE_CYCLES, seed=0))
    return g, train(g, 2, TrainConfig(seed=0)).model


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
