import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rstan import kernels  # noqa: E402
from rstan.tensor import set_check_finite  # noqa: E402


@pytest.fixture(autouse=True)
def _finite_checks():
    prev = set_check_finite(True)
    yield
    set_check_finite(prev)


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    prev = kernels.use_backend(request.param)
    yield request.param
    kernels.backend = prev
