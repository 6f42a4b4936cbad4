import numpy as np
import pytest

from sfgof.inference_kit import RngStream


@pytest.fixture(scope="session")
def base_stream():
    return RngStream(20260808, 0)


def seeded(master: int, stream: int = 0) -> RngStream:
    return RngStream(master, stream)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
