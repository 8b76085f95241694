"""The brute-force references are checked first against closed forms."""

import numpy as np
import pytest
import scipy.linalg

from rpa_crystal.errors import GapClosed, NearSingular
from rpa_crystal.oracle import (DenseReference, build_supercell_reference, exact_propagate,
                                resolvent_solve, static_density_response,
                                static_perturbation_oracle)
from rpa_crystal.lattice import Lattice

from conftest import random_hermitian


def test_dense_reference_residual():
    rng = np.random.default_rng(0)
    ref = DenseReference.from_matrix(random_hermitian(rng, 12))
    p = ref.projector(4)
    np.testing.assert_allclose(p @ p, p, atol=1e-13)
    assert np.trace(p).real == pytest.approx(4.0)


def test_exact_propagate_static_state():
    h = np.diag([0.0, 1.0, 3.0]).astype(complex)
    g0 = np.diag([1.0, 0.0, 0.0]).astype(complex)
    out = exact_propagate(lambda t: h, g0, np.linspace(0, 5, 6))
    np.testing.assert_allclose(out, np.broadcast_to(g0, out.shape), atol=1e-13)


def test_exact_propagate_constant_perturbation():
    rng = np.random.default_rng(1)
    h = random_hermitian(rng, 6)
    v = random_hermitian(rng, 6, 0.1)
    g0 = DenseReference.from_matrix(h).projector(2)
    t = np.linspace(0, 2, 5)
    out = exact_propagate(lambda s: h + v, g0, t, substeps=4)
    for k, s in enumerate(t):
        u = scipy.linalg.expm(-1j * s * (h + v))
        np.testing.assert_allclose(out[k], u @ g0 @ u.conj().T, atol=1e-11)


def test_exact_propagate_substep_self_convergence():
    rng = np.random.default_rng(2)
    h = random_hermitian(rng, 8)
    v = random_hermitian(rng, 8, 0.2)
    g0 = DenseReference.from_matrix(h).projector(3)
    t = np.linspace(0, 2, 21)

    def ht(s):
        return h + np.sin(1.3 * s) * v

    a = exact_propagate(ht, g0, t, substeps=16)
    b = exact_propagate(ht, g0, t, substeps=32)
    c = exact_propagate(ht, g0, t, substeps=64)
    # second order: halving the sub-step divides the difference by ~4
    ratio = np.abs(a - b).max() / np.abs(b - c).max()
    assert 3.5 < ratio < 4.5
    # Richardson-extrapolated references agree far below the raw differences
    r1, r2 = (4 * b - a) / 3, (4 * c - b) / 3
    assert np.abs(r1 - r2).max() < 1e-10


def test_static_oracle_zero_perturbation():
    h = np.diag([0.0, 1.0, 2.0]).astype(complex)
    assert np.abs(static_perturbation_oracle(h, 1, np.zeros((3, 3)))).max() == 0.0


def test_static_oracle_commuting_perturbation():
    h = np.diag([0.0, 1.0, 2.0]).astype(complex)
    v = np.diag([0.3, -0.2, 0.7]).astype(complex)
    np.testing.assert_allclose(static_perturbation_oracle(h, 1, v), 0.0, atol=1e-9)


def test_static_oracle_two_level_closed_form():
    e1, e2, c = -0.4, 0.9, 0.3 + 0.2j
    h = np.diag([e1, e2]).astype(complex)
    v = np.array([[0.0, c], [np.conj(c), 0.0]])
    dp = static_perturbation_oracle(h, 1, v)
    # first-order projector change |1><2| c* / (e1 - e2) + h.c.
    expect = np.array([[0.0, c / (e1 - e2)], [np.conj(c) / (e1 - e2), 0.0]])
    np.testing.assert_allclose(dp, expect, atol=1e-6)


def test_static_oracle_gap_closed():
    h = np.diag([0.0, 1e-9]).astype(complex)
    with pytest.raises(GapClosed):
        static_perturbation_oracle(h, 1, np.eye(2) * 0)


def test_resolvent_eigenvector():
    rng = np.random.default_rng(3)
    ref = DenseReference.from_matrix(random_hermitian(rng, 7))
    z = 0.37 + 0.1j
    x = resolvent_solve(ref.h, z, ref.vectors[:, 2])
    np.testing.assert_allclose(x, ref.vectors[:, 2] / (ref.energies[2] - z), atol=1e-12)


def test_resolvent_projector_kills_occupied():
    rng = np.random.default_rng(4)
    ref = DenseReference.from_matrix(random_hermitian(rng, 7))
    perp = np.eye(7) - ref.projector(3)
    x = resolvent_solve(ref.h, 0.1j, ref.vectors[:, 1], perp)
    np.testing.assert_allclose(x, 0.0, atol=1e-13)


def test_resolvent_matches_spectral_sum():
    rng = np.random.default_rng(5)
    ref = DenseReference.from_matrix(random_hermitian(rng, 9))
    rhs = rng.normal(size=9) + 1j * rng.normal(size=9)
    z = 0.25 - 0.3j
    spectral = ref.vectors @ ((ref.vectors.conj().T @ rhs) / (ref.energies - z))
    np.testing.assert_allclose(resolvent_solve(ref.h, z, rhs), spectral, rtol=1e-10, atol=1e-12)


def test_resolvent_near_singular():
    h = np.diag([0.0, 1.0]).astype(complex)
    with pytest.raises(NearSingular):
        resolvent_solve(h, 1.0, np.array([0.0, 1.0]))


def test_supercell_reference_free_density_response_sign():
    # a static potential lowers the density where it is attractive: chi0(K,K) < 0
    ref = build_supercell_reference(Lattice.cubic(2.0, 1), {(1,): 0.5, (-1,): 0.5},
                                    0.5 * (2 * np.pi) ** 2 + 1e-9, 3, 1)
    k = np.array([np.pi / 3])
    assert static_density_response(ref, k, k).real < 0
