"""Macroscopic permittivity of the crystal from homogenized band sums.

All sums run over the occupied bands ``n < N`` and the empty bands of the
truncated basis, on the Brillouin grid of the supplied band structure.
Periodic products ``u_m conj(u_n)`` are represented exactly on the
difference basis (cutoff ``4 e_cut``), which also serves as the K-basis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .bands import BandStructure, FermiData, density_basis, pw_overlaps
from .coulomb import FOUR_PI, coulomb_half_symbol
from .errors import FrequencyOutOfGap, SolveFailure
from .response import ResponseQuery, t_eta


def _check(omega, fermi):
    if abs(omega) >= fermi.gap:
        raise FrequencyOutOfGap(f"|omega| = {abs(omega):.6g} is not below the gap {fermi.gap:.6g}")


def _gradients(bands: BandStructure, vecs, direction):
    """Coefficients of ``(k.grad) u`` for every column of ``vecs``."""
    kg = bands.basis.cart @ np.asarray(direction, dtype=float)
    return 1j * kg[:, None] * vecs


def _velocity(bands, vecs, nocc, direction):
    """``D[m, n] = <u_m, (k.grad) u_n>`` for empty m, occupied n."""
    return vecs[:, nocc:].conj().T @ _gradients(bands, vecs[:, :nocc], direction)


def _gaps(energies, nocc):
    """``e_m - e_n`` with m empty (rows) and n occupied (columns)."""
    return energies[nocc:, None] - energies[None, :nocc]


def l_matrix(bands: BandStructure, fermi: FermiData, omega: float) -> np.ndarray:
    """``d x d`` matrix with ``k^T L k = 8 pi/|cell| avg_q sum |<(k.grad)u_n, u_m>|^2 / (D (D+w) (D-w))``."""
    _check(omega, fermi)
    d = bands.basis.dim
    nocc = fermi.n_electrons
    out = np.zeros((d, d), dtype=complex)
    for w, e, c in zip(bands.grid.weights, bands.energies, bands.vectors):
        de = _gaps(e, nocc)
        den = de * (de + omega) * (de - omega)
        vel = [_velocity(bands, c, nocc, np.eye(d)[i]) for i in range(d)]
        for i, j in itertools.product(range(d), repeat=2):
            out[i, j] += w * np.sum(np.conj(vel[i]) * vel[j] / den)
    return (2.0 * FOUR_PI / bands.cell_volume) * out.real


@dataclass
class _KBasis:
    coords: np.ndarray
    cart: np.ndarray
    half: np.ndarray  # sqrt(4 pi) / |K|


def nonzero_kbasis(bands: BandStructure) -> _KBasis:
    db = density_basis(bands.basis)
    keep = np.arange(len(db)) != db.zero_index
    coords = db.coords[keep]
    cart = db.cart[keep]
    return _KBasis(coords, cart, coulomb_half_symbol(cart))


def _product_overlaps(bands, vecs, nocc, kb):
    """``Y[k, n, m] = <u_n, e^{-iK_k.x} u_m>`` for occupied n, empty m."""
    occ, emp = vecs[:, :nocc], vecs[:, nocc:]
    return np.array([pw_overlaps(bands.basis, occ, emp, K) for K in kb.coords])


def b_vector(bands: BandStructure, fermi: FermiData, omega: float, k_direction, kb=None) -> np.ndarray:
    """K != 0 coefficients of the long-wavelength column ``P0 b_k``."""
    _check(omega, fermi)
    kb = kb or nonzero_kbasis(bands)
    nocc = fermi.n_electrons
    acc = np.zeros(len(kb.coords), dtype=complex)
    for w, e, c in zip(bands.grid.weights, bands.energies, bands.vectors):
        de = _gaps(e, nocc)
        vel = _velocity(bands, c, nocc, k_direction)  # [m, n]
        coef = vel / ((de - omega) * (de + omega))
        y = _product_overlaps(bands, c, nocc, kb)  # [k, n, m]
        acc += w * np.einsum("knm,mn->k", y, coef)
    vol = bands.cell_volume
    return -2j * np.sqrt(FOUR_PI) / vol * kb.half * acc


def c_operator(bands: BandStructure, fermi: FermiData, omega: float, kb=None) -> np.ndarray:
    """Dense matrix of ``C(omega)`` on the K != 0 basis."""
    _check(omega, fermi)
    kb = kb or nonzero_kbasis(bands)
    nocc = fermi.n_electrons
    m = np.zeros((len(kb.coords),) * 2, dtype=complex)
    for w, e, c in zip(bands.grid.weights, bands.energies, bands.vectors):
        de = _gaps(e, nocc).T  # [n, m]
        wt = 1.0 / (de - omega) + 1.0 / (de + omega)
        y = _product_overlaps(bands, c, nocc, kb).reshape(len(kb.coords), -1)
        m += w * (y * wt.ravel()) @ y.conj().T
    m *= kb.half[:, None] * kb.half[None, :] / bands.cell_volume
    return np.eye(len(kb.coords)) + m


@dataclass
class MacroPermittivity:
    omega: float
    eps: np.ndarray
    L: np.ndarray
    b: dict = field(repr=False)
    C: np.ndarray = field(repr=False)

    @property
    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.eps + self.eps.T)).min())

    @property
    def asymmetry(self) -> float:
        return float(np.abs(self.eps - self.eps.T).max())

    @property
    def c_condition(self) -> float:
        return float(np.linalg.cond(self.C))

    def quadratic(self, k) -> float:
        k = np.asarray(k, dtype=float)
        return float(k @ self.eps @ k)


def _hermitian_solve(c, rhs):
    try:
        return scipy.linalg.solve(c, rhs, assume_a="her")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError) as exc:
        raise SolveFailure("C(omega) solve failed") from exc


def eps_m(bands: BandStructure, fermi: FermiData, omega: float) -> MacroPermittivity:
    """``eps_M(omega)`` recovered from its quadratic form by polarization."""
    _check(omega, fermi)
    d = bands.basis.dim
    kb = nonzero_kbasis(bands)
    L = l_matrix(bands, fermi, omega)
    C = c_operator(bands, fermi, omega, kb)
    cache = {}

    def q(k):
        key = tuple(k)
        if key not in cache:
            b = b_vector(bands, fermi, omega, k, kb)
            cache[key] = (b, float(k @ k + k @ L @ k - np.vdot(b, _hermitian_solve(C, b)).real))
        return cache[key][1]

    eye = np.eye(d)
    eps = np.zeros((d, d))
    for i in range(d):
        eps[i, i] = q(eye[i])
    for i, j in itertools.combinations(range(d), 2):
        eps[i, j] = eps[j, i] = 0.5 * (q(eye[i] + eye[j]) - eps[i, i] - eps[j, j])
    return MacroPermittivity(omega, eps, L, {k: v[0] for k, v in cache.items()}, C)


def eps_m_sweep(bands, fermi, omegas, threads=None):
    from .bands import _map

    return _map(lambda w: eps_m(bands, fermi, float(w)), list(omegas), threads)


def screening_operator(bands: BandStructure, fermi: FermiData, omega: float, q_cart):
    """``A(omega, q)`` on the full difference basis (index of ``K = 0`` returned too)."""
    db = density_basis(bands.basis)
    q_frac = bands.basis.rl.to_fractional(q_cart)
    block = t_eta(bands, fermi, ResponseQuery([omega], 0.0, q_frac, db.coords))
    return block.screening_matrix(0), db.zero_index


def a_scalar_probe(bands: BandStructure, fermi: FermiData, omega: float, q_cart) -> complex:
    """``<e0, A(omega, q)^{-1} e0>`` for a small nonzero ``q``."""
    if np.linalg.norm(q_cart) == 0:
        raise ValueError("q must be nonzero")
    a, i0 = screening_operator(bands, fermi, omega, q_cart)
    e0 = np.zeros(len(a))
    e0[i0] = 1.0
    try:
        x = np.linalg.solve(a, e0)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure("A(omega, q) is singular") from exc
    return complex(x[i0])


def small_q_limit(bands, fermi, omega, direction, etas=(1e-1, 1e-2, 1e-3)) -> float:
    """Polynomial extrapolation to ``eta = 0`` of the scalar probe along ``direction``."""
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    vals = [a_scalar_probe(bands, fermi, omega, eta * direction).real for eta in etas]
    coef = np.polyfit(np.asarray(etas), np.asarray(vals), len(etas) - 1)
    return float(coef[-1])


def macro_poisson_solve(eps: np.ndarray, k_cart, nu_hat) -> np.ndarray:
    """``W(k) = 4 pi nu(k) / (k^T eps k)`` for nonzero wavevectors ``k``.

    ``eps`` is one ``d x d`` matrix or a stack matching the leading axis of
    ``k_cart``.
    """
    k = np.atleast_2d(np.asarray(k_cart, dtype=float))
    eps = np.asarray(eps, dtype=float)
    if eps.ndim == 2:
        den = np.einsum("ki,ij,kj->k", k, eps, k)
    else:
        den = np.einsum("ki,kij,kj->k", k, eps, k)
    if np.any(den <= 0):
        raise ValueError("wavevectors must be nonzero")
    return FOUR_PI * np.asarray(nu_hat) / den


def write_eps_csv(samples, path):
    d = samples[0].eps.shape[0]
    cols = ["omega"] + [f"eps_{i + 1}{j + 1}" for i in range(d) for j in range(d)] + ["min_eig"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for s in samples:
            vals = [s.omega] + list(s.eps.ravel()) + [s.min_eig]
            fh.write(",".join(f"{v:.15e}" for v in vals) + "\n")
