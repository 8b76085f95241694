import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpa_crystal.cli import resolvent_b_reference
from rpa_crystal.dielectric import (b_vector, c_operator, eps_m, eps_m_sweep, l_matrix, macro_poisson_solve,
                                    nonzero_kbasis, small_q_limit, write_eps_csv)
from rpa_crystal.errors import FrequencyOutOfGap
from rpa_crystal.response import ResponseQuery, t_eta

from conftest import chain


@pytest.mark.parametrize("frac", [0.0, 0.5])
def test_l_is_small_q_curvature(chain_1d, frac):
    """-4 pi T_00(omega, q) / (|cell| q^2) tends to L(omega) as q -> 0."""
    bands, f = chain_1d
    om = frac * f.gap
    L = l_matrix(bands, f, om)[0, 0]
    q = 1e-3
    t = t_eta(bands, f, ResponseQuery([om], 0.0, bands.basis.rl.to_fractional([q]), [[0]])).T[0, 0, 0]
    assert -4 * np.pi * t.real / (bands.cell_volume * q * q) == pytest.approx(L, rel=1e-5)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.95))
def test_l_even_and_growing(frac):
    bands, f = chain(counts=3)
    om = frac * f.gap
    lp, lm, l0 = (l_matrix(bands, f, w) for w in (om, -om, 0.0))
    np.testing.assert_allclose(lp, lm, rtol=1e-13)
    assert lp[0, 0] >= l0[0, 0] * (1 - 1e-14) and l0[0, 0] > 0


def test_b_matches_resolvent(chain_1d):
    bands, f = chain_1d
    kb = nonzero_kbasis(bands)
    om = 0.4 * f.gap
    np.testing.assert_allclose(b_vector(bands, f, om, [1.0], kb), resolvent_b_reference(bands, f, om, [1.0], kb),
                               atol=1e-10)


def test_b_matches_resolvent_3d(cubic_3d):
    bands, f = cubic_3d
    kb = nonzero_kbasis(bands)
    d = np.array([0.3, -1.0, 0.5])
    np.testing.assert_allclose(b_vector(bands, f, 0.2, d, kb), resolvent_b_reference(bands, f, 0.2, d, kb),
                               atol=1e-10)


def test_b_linear_and_even(cubic_3d):
    bands, f = cubic_3d
    kb = nonzero_kbasis(bands)
    x, y = np.array([1.0, 0, 0]), np.array([0, 0.5, 2.0])
    bx, by = b_vector(bands, f, 0.3, x, kb), b_vector(bands, f, 0.3, y, kb)
    np.testing.assert_allclose(b_vector(bands, f, 0.3, 2 * x - y, kb), 2 * bx - by, atol=1e-13)
    np.testing.assert_allclose(b_vector(bands, f, -0.3, x, kb), bx, atol=1e-13)


@pytest.mark.parametrize("frac", [0.0, 0.6, -0.9])
def test_c_hermitian_above_identity(chain_1d, frac):
    bands, f = chain_1d
    c = c_operator(bands, f, frac * f.gap)
    assert np.abs(c - c.conj().T).max() < 1e-12
    assert np.linalg.eigvalsh(c).min() >= 1 - 1e-12


def test_rejects_frequency_at_gap(chain_1d):
    bands, f = chain_1d
    for fn in (l_matrix, c_operator, eps_m):
        with pytest.raises(FrequencyOutOfGap):
            fn(bands, f, f.gap)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.8, 0.8))
def test_eps_contract_1d(frac):
    bands, f = chain(counts=9)
    e = eps_m(bands, f, frac * f.gap)
    e_neg = eps_m(bands, f, -frac * f.gap)
    assert e.min_eig >= 1 - 1e-8
    assert e.eps[0, 0] == pytest.approx(e_neg.eps[0, 0], rel=1e-10)


def test_eps_local_fields_lower(chain_1d):
    """Local fields only reduce the permittivity: eps <= 1 + L."""
    bands, f = chain_1d
    e = eps_m(bands, f, 0.3 * f.gap)
    assert 1.0 < e.eps[0, 0] <= 1 + e.L[0, 0]


def test_eps_cubic_isotropic(cubic_3d):
    bands, f = cubic_3d
    e = eps_m(bands, f, 0.0)
    assert e.asymmetry < 1e-10
    np.testing.assert_allclose(np.diag(e.eps), e.eps[0, 0], rtol=1e-8)
    assert np.abs(e.eps - np.diag(np.diag(e.eps))).max() < 1e-8
    assert e.min_eig >= 1.0


def test_eps_anisotropic_symmetric():
    """A potential that breaks cubic symmetry gives a full but symmetric matrix."""
    from rpa_crystal.bands import PeriodicPotential, density_basis, fermi_data, solve_bands
    from rpa_crystal.lattice import Lattice, build_reciprocal, bz_grid, plane_wave_basis

    lat = Lattice(np.array([[2.0, 0.3], [0.0, 1.7]]))
    rl = build_reciprocal(lat)
    basis = plane_wave_basis(rl, 12.0)
    pot = PeriodicPotential.cosine(density_basis(basis), {(1, 0): 0.8, (0, 1): 0.5, (1, 1): 0.3})
    bands = solve_bands(pot, basis, bz_grid(rl, 3))
    e = eps_m(bands, fermi_data(bands, 1), 0.0)
    assert e.asymmetry < 1e-10
    assert abs(e.eps[0, 1]) > 1e-4
    assert e.min_eig >= 1.0


@pytest.mark.parametrize("frac", [0.0, 0.4, 0.7])
def test_small_q_probe_matches(chain_1d, frac):
    bands, f = chain_1d
    om = frac * f.gap
    e = eps_m(bands, f, om)
    assert small_q_limit(bands, f, om, [1.0]) == pytest.approx(1 / e.eps[0, 0], rel=1e-3)


def test_small_q_probe_3d(cubic_3d):
    bands, f = cubic_3d
    e = eps_m(bands, f, 0.0)
    s = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    assert small_q_limit(bands, f, 0.0, s) == pytest.approx(1 / e.quadratic(s), rel=1e-3)


def test_sweep_and_csv(tmp_path, chain_1d_coarse):
    bands, f = chain_1d_coarse
    samples = eps_m_sweep(bands, f, [-0.2, 0.0, 0.2])
    assert samples[0].eps[0, 0] == pytest.approx(samples[2].eps[0, 0], rel=1e-12)
    path = tmp_path / "eps.csv"
    write_eps_csv(samples, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "omega,eps_11,min_eig" and len(lines) == 4


def test_macro_poisson_scalar():
    w = macro_poisson_solve(2.0 * np.eye(3), [[1.0, 0, 0], [0, 2.0, 0]], [1.0, 1.0])
    np.testing.assert_allclose(w, [2 * np.pi, np.pi / 2])


def test_macro_poisson_stack_and_zero():
    eps = np.stack([np.eye(2), np.diag([1.0, 4.0])])
    w = macro_poisson_solve(eps, [[0, 1.0], [0, 1.0]], [1.0, 1.0])
    np.testing.assert_allclose(w, [4 * np.pi, np.pi])
    with pytest.raises(ValueError):
        macro_poisson_solve(np.eye(2), [[0.0, 0.0]], [1.0])
