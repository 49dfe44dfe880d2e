import pytest

from helpers import golden_log


@pytest.fixture
def glog():
    return golden_log()
