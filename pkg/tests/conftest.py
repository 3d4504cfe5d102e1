import numpy as np
import pytest

from povmkit import povm as povm_mod


def random_density_matrix(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def random_pure_state(seed, d):
    from scipy.stats import unitary_group

    ket = unitary_group.rvs(d, random_state=seed)[:, 0]
    return np.outer(ket, ket.conj())


@pytest.fixture(scope="session")
def sic1():
    return povm_mod.sic_povm(1)


@pytest.fixture(scope="session")
def sic2():
    return povm_mod.sic_povm(2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240815)
