import numpy as np
import pytest

from rpa_crystal.bands import PeriodicPotential, density_basis, fermi_data, solve_bands
from rpa_crystal.dynamics import SupercellModel
from rpa_crystal.lattice import Lattice, build_reciprocal, bz_grid, plane_wave_basis

# 1D chain used throughout: a = 2, V(x) = 2 v cos(pi x), |K| <= 2 b
A_1D = 2.0
E_CUT_1D = 0.5 * (2 * np.pi) ** 2 + 1e-9
V1 = 0.5


def chain(v=V1, counts=9, e_cut=E_CUT_1D, a=A_1D, n_electrons=1):
    lat = Lattice.cubic(a, 1)
    rl = build_reciprocal(lat)
    basis = plane_wave_basis(rl, e_cut)
    pot = PeriodicPotential.cosine(density_basis(basis), {(1,): v})
    bands = solve_bands(pot, basis, bz_grid(rl, counts))
    return bands, fermi_data(bands, n_electrons)


@pytest.fixture(scope="session")
def chain_1d():
    return chain()


@pytest.fixture(scope="session")
def chain_1d_coarse():
    return chain(counts=3)


@pytest.fixture(scope="session")
def cubic_3d():
    lat = Lattice.cubic(2.0, 3)
    rl = build_reciprocal(lat)
    basis = plane_wave_basis(rl, 5.0)
    modes = {(1, 0, 0): 0.5, (0, 1, 0): 0.5, (0, 0, 1): 0.5}
    pot = PeriodicPotential.cosine(density_basis(basis), modes)
    bands = solve_bands(pot, basis, bz_grid(rl, 3))
    return bands, fermi_data(bands, 1)


def supercell(n_cells=3, v=V1):
    lat = Lattice.cubic(A_1D, 1)
    rl = build_reciprocal(lat)
    basis = plane_wave_basis(rl, E_CUT_1D)
    pot = PeriodicPotential.cosine(density_basis(basis), {(1,): v})
    return SupercellModel.build(lat, pot, E_CUT_1D, n_cells, 1)


@pytest.fixture(scope="session")
def model_3():
    return supercell(3)


@pytest.fixture(scope="session")
def model_1():
    return supercell(1)


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)
