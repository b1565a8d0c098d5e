import numpy as np
import pytest
from hypothesis import HealthCheck, settings

# single-core CI box: wall-clock deadlines are noise, disable them
settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")


@pytest.fixture
def scratch(tmp_path):
    d = tmp_path / "scratch"
    d.mkdir()
    return d


def assert_bit_equal(a: np.ndarray, b: np.ndarray):
    """Bit-level equality; plain == would call NaN != NaN."""
    assert a.shape == b.shape
    assert a.tobytes() == b.tobytes()
