import numpy as np
import pytest

from retroknn.backbone import init_backbone
from retroknn.config import AdapterConfig, BackboneConfig, HarnessConfig, IndexConfig, RetrievalConfig, RunConfig, TrainConfig
from retroknn.graphio import generate_synthetic
from retroknn.retrieve import prepare_dataset_sites
from retroknn.store import build_stores

HIDDEN = 8
K_NEIGHBORS = 4


@pytest.fixture(scope="session")
def corpus():
    return generate_synthetic(80, 4, 3, 0.3, seed=7, min_nodes=4, max_nodes=8,
                              val_fraction=0.2, test_fraction=0.15)


@pytest.fixture(scope="session")
def train_set(corpus):
    return corpus[0]


@pytest.fixture(scope="session")
def val_set(corpus):
    return corpus[1]


@pytest.fixture(scope="session")
def test_set(corpus):
    return corpus[2]


@pytest.fixture(scope="session")
def backbone(train_set):
    return init_backbone(2, HIDDEN, train_set.node_vocab_size, train_set.edge_vocab_size,
                         train_set.n_atom_templates, train_set.n_bond_templates, np.random.default_rng(0))


@pytest.fixture(scope="session")
def stores(train_set, backbone):
    return build_stores(train_set, backbone, IndexConfig(kind="flat"))


@pytest.fixture(scope="session")
def val_contexts(val_set, backbone, stores):
    atom, bond = stores
    return prepare_dataset_sites(val_set, backbone, atom, bond, K_NEIGHBORS)


@pytest.fixture
def small_cfg():
    return RunConfig(
        seed=3,
        backbone=BackboneConfig(n_layers=2, hidden=HIDDEN, dropout=0.0),
        train=TrainConfig(lr=0.01, epochs=2, patience=2, batch_size=8),
        index=IndexConfig(kind="flat"),
        retrieval=RetrievalConfig(k_neighbors=K_NEIGHBORS, top_n=20),
        adapter=AdapterConfig(lr=0.01, epochs=2, batch_size=4),
        harness=HarnessConfig(ks=[1, 3, 5], n_runs=1, held_classes=[1], keep_fractions=[0.5],
                              sweep_neighbors=[1, 2]),
    )
