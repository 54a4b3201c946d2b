import numpy as np
import pytest

from gridtopo.grid import GridGraph, Line
from gridtopo.sampler import InjectionStatistics


@pytest.fixture
def two_bus():
    """Single line (r=0, x=1) from the reference: the composite Laplacian
    is the 2x2 swap matrix."""
    return GridGraph(buses=("0", "1"), reference="0", lines=(Line("0", "1", 0.0, 1.0),))


@pytest.fixture
def path3():
    """Reference - bus1 - bus2 chain, all lines (r=0, x=1)."""
    return GridGraph(
        buses=("0", "1", "2"),
        reference="0",
        lines=(Line("0", "1", 0.0, 1.0), Line("1", "2", 0.0, 1.0)),
    )


def random_stats(n: int, seed: int, correlated_pq: bool = True) -> InjectionStatistics:
    """Per-bus variances in [0.5, 2], optional p-q correlation keeping the
    per-bus blocks positive definite."""
    rng = np.random.default_rng(seed)
    pp = rng.uniform(0.5, 2.0, n)
    qq = rng.uniform(0.5, 2.0, n)
    if correlated_pq:
        rho = rng.uniform(-0.9, 0.9, n)
        pq = rho * np.sqrt(pp * qq)
    else:
        pq = np.zeros(n)
    return InjectionStatistics(sigma_pp=pp, sigma_qq=qq, sigma_pq=pq)
