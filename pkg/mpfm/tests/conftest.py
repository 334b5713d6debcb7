import pytest

from mpfm.backend.models.enum import Precision
from mpfm.backend.nn.tensor import set_precision


@pytest.fixture(autouse=True)
def float64_profile():
    """Oracle tests run in 64-bit; restore it after tests that switch."""
    set_precision(Precision.FLOAT64)
    yield
    set_precision(Precision.FLOAT64)
