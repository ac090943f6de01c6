import numpy as np
import pytest

from seqcurve.asymptotics import CovProbe
from seqcurve.curves import BinormalModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture(scope="session")
def binormal():
    """Cases N(1, 1), controls N(0, 1)."""
    return BinormalModel(1.0, 1.0)


@pytest.fixture(scope="session")
def table_probes():
    return [
        CovProbe(0.4, 0.4, 0.7),
        CovProbe(0.4, 1.0, 1.0),
        CovProbe(0.2, 0.4, 0.7),
        CovProbe(0.2, 1.0, 1.0),
    ]


def random_probes(rng, n, lo=0.1, hi=0.9, r_min=0.2):
    idx = rng.uniform(lo, hi, n)
    r_D = rng.uniform(r_min, 1.0, n)
    r_Dbar = rng.uniform(r_min, 1.0, n)
    return [CovProbe(float(a), float(b), float(c)) for a, b, c in zip(idx, r_D, r_Dbar)]
