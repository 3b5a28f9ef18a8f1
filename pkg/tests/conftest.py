import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccbm.data import Dataset, DatasetMeta, save_concept_bank, save_dataset
from ccbm.model import ConceptBank, ModelConfig, init_params


def tiny_config(n_u=2, task="classification", heads=1, d_k=4):
    return ModelConfig(d=5, d_k=d_k, n_k=3, n_c=2, n_u=n_u, heads=heads,
                       concept_task=task)


def random_bank(config, seed=1):
    rng = np.random.default_rng(seed)
    return ConceptBank(
        names=[f"c{i}" for i in range(config.n_k)],
        embeddings=rng.standard_normal((config.n_k, config.d_k)),
    )


@pytest.fixture
def tiny_setup():
    config = tiny_config()
    return config, init_params(config, 0), random_bank(config)


def tiny_dataset(n=20, seed=0, task="classification", d=5, n_k=3, n_c=2):
    rng = np.random.default_rng(seed)
    if task == "classification":
        concepts = rng.integers(0, 2, (n, n_k)).astype(float)
    else:
        concepts = rng.uniform(0, 1, (n, n_k))
    meta = DatasetMeta(task=task, d=d, n_k=n_k, n_c=n_c,
                       concept_names=[f"c{i}" for i in range(n_k)],
                       class_names=[f"k{c}" for c in range(n_c)])
    return Dataset(meta=meta, ids=[f"s{i}" for i in range(n)],
                   features=rng.standard_normal((n, d)),
                   concepts=concepts,
                   labels=rng.integers(0, n_c, n))


@pytest.fixture
def dataset_dir(tmp_path):
    ds = tiny_dataset()
    d = tmp_path / "data"
    save_dataset(ds, d)
    config = tiny_config()
    bank = random_bank(config)
    save_concept_bank(bank, tmp_path / "bank.csv")
    return d, tmp_path / "bank.csv", ds, bank
