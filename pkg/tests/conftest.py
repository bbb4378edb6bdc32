import pytest

from mmcbm.cav import SvmConfig, train_concept_bank
from mmcbm.ingest import SyntheticSpec, generate_synthetic_cohort, us_analog_spec
from mmcbm.model import TrainConfig, train_predictor


@pytest.fixture(scope="session")
def default_cohort():
    """The standard desk cohort: 150 patients, 30 concepts, fixed seed."""
    return generate_synthetic_cohort(SyntheticSpec())


@pytest.fixture(scope="session")
def manifest(default_cohort):
    return default_cohort[0]


@pytest.fixture(scope="session")
def truth(default_cohort):
    return default_cohort[1]


@pytest.fixture(scope="session")
def trained_bank(manifest):
    return train_concept_bank(manifest, SvmConfig())


@pytest.fixture(scope="session")
def bank(trained_bank):
    return trained_bank[0]


@pytest.fixture(scope="session")
def cavs(trained_bank):
    return trained_bank[1]


@pytest.fixture(scope="session")
def predictor(manifest, bank):
    return train_predictor(manifest, bank, TrainConfig(val_fold=1, seed=0))


@pytest.fixture(scope="session")
def us_cohort():
    return generate_synthetic_cohort(us_analog_spec())
