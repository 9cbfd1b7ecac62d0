import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from database.cache_connector import CacheConnector  # noqa: E402
from database.cache_operations import EigenCacheOperations  # noqa: E402
from services.funcalc_service import RegularizerConfig, RegularizerService  # noqa: E402
from services.geometry_service import Circle, FlatTorus, GeometryService  # noqa: E402
from services.kernel_service import KernelPair  # noqa: E402


@pytest.fixture(scope='session')
def kernel():
    return KernelPair()


@pytest.fixture
def circle():
    return Circle(n=64)


@pytest.fixture
def torus():
    return FlatTorus(n1=32, n2=32)


@pytest.fixture
def geometry_service():
    return GeometryService()


@pytest.fixture
def regularizer(kernel, geometry_service):
    return RegularizerService(RegularizerConfig(kernel=kernel), geometry_service)


@pytest.fixture
def cache_ops(tmp_path):
    return EigenCacheOperations(CacheConnector(tmp_path / 'cache'))


@pytest.fixture
def smooth_bump_values():
    def make(g, center=np.pi, width=1.5):
        from services.distribution_service import SmoothBump, make_distribution
        return make_distribution(SmoothBump(center, width), g).function
    return make
