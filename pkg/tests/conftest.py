import pytest

from overhang import predictors as pr

DATASET_SEED = 20250810


@pytest.fixture(scope="session")
def dataset50k():
    return pr.generate_dataset(50_000, seed=DATASET_SEED)


@pytest.fixture(scope="session")
def model50k(dataset50k):
    return pr.train_classifier(dataset50k)
