import pytest

from hlop.harness.data import load_data_dir, write_idx_dataset

POOL_SEED = 1


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    write_idx_dataset(str(d), n_train=12000, n_test=4000, seed=POOL_SEED)
    return str(d)


@pytest.fixture(scope="session")
def data_pools(data_dir):
    return load_data_dir(data_dir)
