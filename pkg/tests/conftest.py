import numpy as np
import pytest

from ahxray.connection import extend_past_boundary, hat_field, split_connection
from ahxray.families import RadialBump, ScalarRFamily
from ahxray.geometry import BoundaryMetricFamily, BoundaryPatch, ProjectiveModel
from ahxray.normalop import ArtificialBoundary, CutoffProfile, NormalOperatorConfig
from ahxray.scenarios import builtin_scenario


@pytest.fixture(scope="session")
def patch():
    return BoundaryPatch(n=2)


@pytest.fixture(scope="session")
def hyperbolic_model(patch):
    return ProjectiveModel(patch=patch, c1=ScalarRFamily(const=1.0), c2=ScalarRFamily(), N=None)


@pytest.fixture(scope="session")
def hyperbolic_field(hyperbolic_model):
    return hat_field(hyperbolic_model)


@pytest.fixture(scope="session")
def hyperbolic_family(patch):
    return BoundaryMetricFamily(
        name="hyperbolic", patch=patch, c1=ScalarRFamily(const=1.0), c2=ScalarRFamily(), N=None
    )


@pytest.fixture(scope="session")
def n5_model(patch):
    prof = RadialBump(amplitude=0.5, width=0.25)
    return ProjectiveModel(
        patch=patch, c1=ScalarRFamily(const=1.0), c2=ScalarRFamily(w_coeff=1.0, profile=prof), N=5
    )


@pytest.fixture(scope="session")
def n5_split(n5_model):
    return split_connection(n5_model)


@pytest.fixture(scope="session")
def n5_field(n5_split):
    return extend_past_boundary(n5_split)


@pytest.fixture(scope="session")
def boundary():
    return ArtificialBoundary(n=2, q=0.25)


@pytest.fixture(scope="session")
def base_config(boundary):
    return NormalOperatorConfig(boundary=boundary, chi=CutoffProfile(M=1.0), sigma=1.0, eta=0.01)


@pytest.fixture(scope="session")
def n5_scenario():
    return builtin_scenario("n5_bump")


def rng(seed=0):
    return np.random.default_rng(seed)
