import math
import pytest
from fastapi.testclient import TestClient

from main import app
from app.config import DiffScheme
from app.models.schemas import EnergyParams, SeedSpec
from app.numerics.seeds import seed_curve
from app.storage.store import RunStore, get_store

# Radius of the critical circle for λ = 1
CRITICAL_RADIUS = 1.0 / math.sqrt(2.0)


def make_curve(kind: str, *params: float, samples: int = 256, dim: int = 2,
               scheme: DiffScheme = DiffScheme.SPECTRAL, **extra):
    """Seed curve helper shared by the test modules."""
    return seed_curve(SeedSpec(kind=kind, params=list(params), samples=samples, dim=dim, scheme=scheme, **extra))


# Test client for API testing
@pytest.fixture
def client(tmp_path):
    """Create a test client whose store lives in a temporary directory."""
    store = RunStore(tmp_path / "store")
    app.dependency_overrides[get_store] = lambda: store
    yield TestClient(app)
    app.dependency_overrides.clear()


@pytest.fixture
def store(tmp_path):
    """A run store rooted in a temporary directory."""
    return RunStore(tmp_path)


@pytest.fixture
def params():
    """Default energy parameters (λ = 1)."""
    return EnergyParams()


@pytest.fixture
def unit_circle():
    return make_curve("circle", 1.0)


@pytest.fixture
def critical_circle():
    """The critical circle r = 1/√2 for λ = 1."""
    return make_curve("circle", CRITICAL_RADIUS)


@pytest.fixture
def ellipse():
    return make_curve("ellipse", 1.2, 0.8)


@pytest.fixture
def figure_eight():
    return make_curve("figure_eight", 1.0, samples=128)
