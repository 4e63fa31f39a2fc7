import numpy as np
import pytest

from modelpress import (
    KVCacheConfig,
    calibrate,
    load_checkpoint,
    tokenize_bytes,
)

from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"

# Evaluation settings shared by the search-oriented tests. Golden values in
# the suite were computed against the shipped fixture files at exactly
# these settings.
CTX = 64
CALIB_TOKENS = 256
SLICE8 = 1024  # corpus prefix used with the 8-layer fixture
SLICE3 = 768  # corpus prefix used with the 3-layer fixture


@pytest.fixture(scope="session")
def corpus():
    text = (FIXTURES / "corpus.txt").read_text(encoding="utf-8")
    return tokenize_bytes(text)


@pytest.fixture(scope="session")
def model8():
    return load_checkpoint(FIXTURES / "model8.opsc")


@pytest.fixture(scope="session")
def model3():
    return load_checkpoint(FIXTURES / "model3.opsc")


@pytest.fixture(scope="session")
def calib8(model8, corpus):
    return calibrate(model8, corpus[:SLICE8], CALIB_TOKENS)


@pytest.fixture(scope="session")
def calib3(model3, corpus):
    return calibrate(model3, corpus[:SLICE3], CALIB_TOKENS)


@pytest.fixture(scope="session")
def kv16_8():
    return KVCacheConfig.uniform(8)


@pytest.fixture(scope="session")
def kv16_3():
    return KVCacheConfig.uniform(3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
