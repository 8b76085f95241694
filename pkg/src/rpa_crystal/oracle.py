"""Brute-force references: dense propagation, finite-difference response and
direct resolvent solves.

Nothing here calls the response or propagation routines of the package;
Hamiltonians are assembled from scratch on explicit plane-wave lists.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import GapClosed, NearSingular
from .lattice import Lattice, build_reciprocal, plane_wave_basis

MAX_DENSE = 24


@dataclass
class DenseReference:
    h: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray

    @classmethod
    def from_matrix(cls, h):
        h = np.asarray(h, dtype=complex)
        e, v = np.linalg.eigh(h)
        res = np.linalg.norm(h @ v - v * e) / max(1.0, np.linalg.norm(h))
        if res > 1e-12:
            raise NearSingular(f"eigendecomposition residual {res:.2e}")
        return cls(h, e, v)

    def projector(self, n_occ):
        v = self.vectors[:, :n_occ]
        return v @ v.conj().T


def exact_propagate(h_of_t, gamma0, t_grid, substeps: int = 16) -> np.ndarray:
    """``gamma(t) = U gamma0 U*`` by exponential-midpoint sub-steps of ``dt / substeps``.

    ``h_of_t(t)`` returns the full Hermitian matrix at time ``t``.
    """
    g = np.asarray(gamma0, dtype=complex)
    if g.shape[0] > MAX_DENSE:
        raise ValueError(f"dense reference limited to {MAX_DENSE} states")
    t = np.asarray(t_grid, dtype=float)
    out = np.zeros((len(t),) + g.shape, dtype=complex)
    out[0] = g
    u = np.eye(g.shape[0], dtype=complex)
    for k in range(len(t) - 1):
        h = (t[k + 1] - t[k]) / substeps
        for j in range(substeps):
            s = t[k] + (j + 0.5) * h
            u = scipy.linalg.expm(-1j * h * np.asarray(h_of_t(s))) @ u
        out[k + 1] = u @ g @ u.conj().T
    return out


def _occupied_projector(h, n_occ, gap_tol):
    e, v = np.linalg.eigh(h)
    if e[n_occ] - e[n_occ - 1] <= gap_tol:
        raise GapClosed(f"gap {e[n_occ] - e[n_occ - 1]:.3e} after perturbation")
    occ = v[:, :n_occ]
    return occ @ occ.conj().T


def static_perturbation_oracle(h, n_occ: int, v, lam: float = 1e-5, gap_tol: float = 1e-8):
    """``(P[H + lam V] - P[H - lam V]) / (2 lam)`` for Hermitian ``V``."""
    h = np.asarray(h, dtype=complex)
    v = np.asarray(v, dtype=complex)
    plus = _occupied_projector(h + lam * v, n_occ, gap_tol)
    minus = _occupied_projector(h - lam * v, n_occ, gap_tol)
    return (plus - minus) / (2 * lam)


def resolvent_solve(h, z, rhs, projector=None, tol: float = 1e-10):
    """Solve ``(H - z) x = P rhs`` by dense LU, with ``P`` the given projector (or 1)."""
    h = np.asarray(h, dtype=complex)
    rhs = np.asarray(rhs, dtype=complex)
    if projector is not None:
        rhs = projector @ rhs
    a = h - z * np.eye(len(h))
    if np.linalg.cond(a) > 1e12:
        raise NearSingular(f"H - z is numerically singular at z = {z}")
    try:
        x = scipy.linalg.solve(a, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NearSingular(f"H - z singular at z = {z}") from exc
    res = np.linalg.norm(a @ x - rhs)
    if not res <= tol * max(1.0, np.linalg.norm(rhs)):
        raise NearSingular(f"resolvent residual {res:.2e} at z = {z}")
    return x


@dataclass
class SupercellReference:
    """Explicit supercell plane-wave problem for a 1D-3D periodic potential."""

    lattice: Lattice
    counts: tuple
    kvecs: np.ndarray  # Cartesian wavevectors of the supercell plane waves
    h: np.ndarray
    n_occ: int

    @property
    def volume(self):
        return self.lattice.volume * float(np.prod(self.counts))

    def density_coefficient(self, p, k):
        """Coefficient of ``e^{ik.x}`` in the density of the plane-wave matrix ``p``."""
        diff = self.kvecs[:, None, :] - self.kvecs[None, :, :]
        mask = np.all(np.abs(diff - k) < 1e-9, axis=-1)
        return np.sum(p[mask]) / self.volume

    def wave_operator(self, k):
        """Multiplication by ``e^{ik.x}``: ``<e_i, e^{ik.x} e_j> = [k_i - k_j = k]``."""
        diff = self.kvecs[:, None, :] - self.kvecs[None, :, :]
        return np.all(np.abs(diff - k) < 1e-9, axis=-1).astype(complex)


def build_supercell_reference(lattice: Lattice, fourier_potential: dict, e_cut: float, counts,
                              n_electrons: int) -> SupercellReference:
    """Supercell Hamiltonian from ``{K-coords: matrix element}`` (matrix-element convention)."""
    rl = build_reciprocal(lattice)
    prim = plane_wave_basis(rl, e_cut)
    counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(counts), (lattice.dim,)))
    ps = []
    for lab in itertools.product(*[range(c) for c in counts]):
        f = np.array(lab, dtype=float) / np.array(counts)
        f = f - np.ceil(f - 0.5 - 1e-10)
        ps.append(f @ rl.vectors)
    kvecs = np.array([p + g for p in ps for g in prim.cart])
    binv = np.linalg.inv(rl.vectors)
    n = len(kvecs)
    h = np.diag(0.5 * np.sum(kvecs**2, axis=1)).astype(complex)
    for i in range(n):
        for j in range(n):
            frac = (kvecs[i] - kvecs[j]) @ binv
            r = np.rint(frac)
            if np.all(np.abs(frac - r) < 1e-9):
                h[i, j] += fourier_potential.get(tuple(int(x) for x in r), 0.0)
    h = 0.5 * (h + h.conj().T)
    return SupercellReference(lattice, counts, kvecs, h, n_electrons * int(np.prod(counts)))


def static_density_response(ref: SupercellReference, k_pot, k_out, lam: float = 1e-5) -> complex:
    """First-order coefficient of ``e^{i k_out.x}`` in the density induced by ``e^{i k_pot.x}``.

    The complex perturbation is split into its two Hermitian parts, each
    handled by a central finite difference of occupied projectors.
    """
    w = ref.wave_operator(np.asarray(k_pot, dtype=float))
    v_re = w + w.conj().T
    v_im = 1j * (w - w.conj().T)
    d_re = static_perturbation_oracle(ref.h, ref.n_occ, v_re, lam)
    d_im = static_perturbation_oracle(ref.h, ref.n_occ, v_im, lam)
    # e^{ik.x} = (v_re - i v_im) / 2
    dp = 0.5 * (d_re - 1j * d_im)
    return ref.density_coefficient(dp, np.asarray(k_out, dtype=float))
