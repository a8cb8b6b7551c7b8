import numpy as np
import pytest

from gfdmflow import config as cfg_mod
from gfdmflow import load_bundled


@pytest.fixture(scope="session")
def case31():
    return load_bundled("case_3_1")


@pytest.fixture(scope="session")
def case32():
    return load_bundled("case_3_2")


@pytest.fixture(scope="session")
def prep31(case31):
    """Prepared rectangular benchmark at dx=5, r_m = 1.6 dx."""
    return cfg_mod.prepare(case31)


@pytest.fixture(scope="session")
def prep31_coarse(case31):
    """Same benchmark on a 31 x 11 lattice for cheap tests."""
    return cfg_mod.prepare(cfg_mod.with_overrides(case31, dx=10.0, dt=1.0))


def uniform_state(prep, p=None, T=None):
    from gfdmflow import State

    n = prep.cloud.n_nodes
    return State(
        time=0.0,
        p=np.full(n, prep.props.p_0 if p is None else p),
        T=np.full(n, prep.props.t_0 if T is None else T),
    )
