import pytest

from midnightq import ModelParams

# The three benchmark systems: large/medium/small pools at high utilization,
# all with a 5.3-day mean stay.
LARGE = (500, 90.95)
MEDIUM = (66, 11.37)
SMALL = (18, 3.03)
MEAN_LOS = 5.3


def make_params(n: int, lam: float) -> ModelParams:
    return ModelParams.from_mean_los(n, lam, MEAN_LOS)


@pytest.fixture(scope="session")
def params_small() -> ModelParams:
    return make_params(*SMALL)


@pytest.fixture(scope="session")
def params_medium() -> ModelParams:
    return make_params(*MEDIUM)


@pytest.fixture(scope="session")
def params_large() -> ModelParams:
    return make_params(*LARGE)
