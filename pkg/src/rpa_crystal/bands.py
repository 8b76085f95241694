"""Bloch fibers of a periodic one-body Hamiltonian and their band structure.

For each quasi-momentum ``q`` the fiber ``-1/2 Delta - i q.grad + |q|^2/2 + V``
is a dense Hermitian matrix on a fixed plane-wave basis. Band indices are
0-based in code: band ``n`` here is band ``n + 1`` in the usual counting, so
the first ``N`` bands ``0..N-1`` are occupied.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coulomb import FourierDensity, FourierPotential, vc_apply
from .errors import MaxIterations, MetallicSystem, NumericalFailure
from .lattice import BrillouinGrid, PlaneWaveBasis, plane_wave_basis

log = logging.getLogger(__name__)


class PeriodicPotential(FourierPotential):
    """Lattice-periodic potential given by its Fourier coefficients."""

    @classmethod
    def cosine(cls, basis: PlaneWaveBasis, amplitudes: dict):
        """``V(x) = sum_K 2 v_K cos(K.x)`` from ``{K-coords: v_K}`` (real v_K).

        The Fourier coefficient stored at ``+/-K`` is ``v_K |cell|^{1/2}`` so
        that matrix elements between plane waves equal ``v_K``.
        """
        s = np.sqrt(basis.rl.lattice.volume)
        modes = {}
        for k, v in amplitudes.items():
            k = tuple(int(c) for c in np.atleast_1d(k))
            modes[k] = modes.get(k, 0.0) + v * s
            mk = tuple(-c for c in k)
            modes[mk] = modes.get(mk, 0.0) + v * s
        return cls.from_modes(basis, modes, real=True)


def potential_matrix(pot: FourierPotential, basis: PlaneWaveBasis) -> np.ndarray:
    """Multiplication operator ``<e_G, V e_G'> = V_{G-G'} / |cell|^{1/2}``.

    Differences falling outside the stored coefficients count as zero.
    """
    table = basis.difference_table(pot.basis)
    padded = np.append(pot.coeffs, 0.0)
    return padded[table] / np.sqrt(basis.rl.lattice.volume)


@dataclass(frozen=True)
class BlochHamiltonian:
    q: np.ndarray
    matrix: np.ndarray


def assemble_hq(pot: FourierPotential, basis: PlaneWaveBasis, q) -> BlochHamiltonian:
    q = np.asarray(q, dtype=float)
    h = potential_matrix(pot, basis).astype(complex)
    h[np.diag_indices_from(h)] += basis.kinetic(q)
    # exact Hermitian symmetrization; the diagonal is real by construction
    h = 0.5 * (h + h.conj().T)
    return BlochHamiltonian(q, h)


def free_bands_reference(basis: PlaneWaveBasis, q) -> np.ndarray:
    return np.sort(basis.kinetic(np.asarray(q, dtype=float)))


def _eigh(h, q):
    try:
        w, v = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed at q = {q}") from exc
    return w, v


def _map(fn, items, threads):
    if threads is None or threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def pw_overlaps(basis: PlaneWaveBasis, left, right, shift) -> np.ndarray:
    """Matrix of ``sum_G conj(left[G, m]) right[G + shift, n]``.

    With ``left``/``right`` holding Bloch coefficient columns this is
    ``<u_m, e^{-i K.x} u_n>`` for ``K = shift``; out-of-basis terms vanish.
    """
    idx = basis.shifted_indices(shift)
    ok = idx >= 0
    return left[ok].conj().T @ right[idx[ok]]


class BandStructure:
    """Eigenpairs of the Bloch fibers on a Brillouin grid.

    ``energies[iq, n]`` ascending in ``n``; ``vectors[iq][:, n]`` holds the
    plane-wave coefficients of ``u_{n,q}``.
    """

    def __init__(self, pot, basis, grid, energies, vectors):
        self.potential = pot
        self.basis = basis
        self.grid = grid
        self.energies = energies
        self.vectors = vectors

    @property
    def n_bands(self) -> int:
        return self.energies.shape[1]

    @property
    def cell_volume(self) -> float:
        return self.basis.rl.lattice.volume

    def at_raw(self, k_frac):
        """Eigenpairs at an arbitrary fractional point as ``(e, c, shift)``.

        For ``k = q + K0`` with ``q`` on the grid the stored coefficients of
        ``q`` are returned with ``shift = K0``: ``c_k(G) = c_q(G + K0)``.
        Off-grid points are diagonalized directly and carry a zero shift.
        Overlaps should add the shift to the plane-wave offset instead of
        re-indexing the coefficients, which would drop components.
        """
        k_frac = np.asarray(k_frac, dtype=float)
        iq = self.grid.index_of(k_frac)
        if iq < 0:
            k = self.basis.rl.to_cartesian(k_frac)
            e, c = _eigh(assemble_hq(self.potential, self.basis, k).matrix, k)
            return e, c, np.zeros(self.basis.dim, dtype=int)
        shift = np.rint(k_frac - self.grid.frac[iq]).astype(int)
        return self.energies[iq], self.vectors[iq], shift

    def at(self, k_frac):
        """Eigenpairs at ``k_frac`` with coefficients re-indexed onto the basis (truncating)."""
        e, c, shift = self.at_raw(k_frac)
        return e, self.shift_vectors(c, shift)

    def shift_vectors(self, vecs, shift):
        if not np.any(shift):
            return vecs
        idx = self.basis.shifted_indices(shift)
        out = np.zeros_like(vecs)
        ok = idx >= 0
        out[ok] = vecs[idx[ok]]
        return out

    def shifted(self, q_frac, threads=None):
        """Eigenpairs at ``q + q'`` for every grid point ``q'``: ``(energies, vectors, shifts)``.

        Vectors are the stored (unshifted) coefficients; see ``at_raw``.
        """
        q_frac = np.asarray(q_frac, dtype=float)
        if self.grid.is_commensurate(q_frac):
            idx, shifts = self.grid.shift_map(q_frac)
            return self.energies[idx], [self.vectors[i] for i in idx], shifts
        pts = self.grid.frac + q_frac
        res = _map(self.at_raw, pts, threads)
        return (np.array([r[0] for r in res]), [r[1] for r in res],
                np.array([r[2] for r in res]))

    def to_csv(self, path):
        d = self.grid.rl.dim
        header = ",".join([f"q{i + 1}" for i in range(d)] + ["n", "epsilon"])
        rows = []
        for iq, f in enumerate(self.grid.frac):
            for n, e in enumerate(self.energies[iq]):
                rows.append(",".join([f"{x:.12g}" for x in f] + [str(n + 1), f"{e:.15e}"]))
        with open(path, "w") as fh:
            fh.write(header + "\n" + "\n".join(rows) + "\n")


def solve_bands(pot, basis: PlaneWaveBasis, grid: BrillouinGrid, threads=None) -> BandStructure:
    def one(q):
        return _eigh(assemble_hq(pot, basis, q).matrix, q)

    res = _map(one, list(grid.cart), threads)
    energies = np.array([r[0] for r in res])
    vectors = np.array([r[1] for r in res])
    return BandStructure(pot, basis, grid, energies, vectors)


@dataclass(frozen=True)
class FermiData:
    n_electrons: int
    sigma_plus: float
    sigma_minus: float

    @property
    def fermi(self) -> float:
        return 0.5 * (self.sigma_plus + self.sigma_minus)

    @property
    def gap(self) -> float:
        return self.sigma_minus - self.sigma_plus

    def to_dict(self) -> dict:
        return {
            "n_electrons": self.n_electrons,
            "sigma_plus": self.sigma_plus,
            "sigma_minus": self.sigma_minus,
            "fermi": self.fermi,
            "gap": self.gap,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def fermi_from_levels(energies, n_electrons: int) -> FermiData:
    """Fermi data from a ``(n_q, n_bands)`` array of band energies."""
    energies = np.atleast_2d(energies)
    if not 1 <= n_electrons < energies.shape[1]:
        raise ValueError(f"need 1 <= N < {energies.shape[1]}, got N = {n_electrons}")
    top = float(energies[:, n_electrons - 1].max())
    bottom = float(energies[:, n_electrons].min())
    if top >= bottom:
        raise MetallicSystem(
            f"band {n_electrons} (max {top:.6g}) overlaps band {n_electrons + 1} (min {bottom:.6g})"
        )
    return FermiData(n_electrons, top, bottom)


def fermi_data(bands: BandStructure, n_electrons: int) -> FermiData:
    return fermi_from_levels(bands.energies, n_electrons)


def bloch_matrix_element(bands: BandStructure, n: int, k_frac, m: int, kp_frac, K) -> complex:
    """``<u_{m,k'}, e^{-i K.x} u_{n,k}>`` with ``K`` given in integer coordinates."""
    _, cn, sn = bands.at_raw(k_frac)
    _, cm, sm = bands.at_raw(kp_frac)
    shift = np.asarray(K, dtype=int) + sn - sm
    return complex(pw_overlaps(bands.basis, cm[:, [m]], cn[:, [n]], shift)[0, 0])


def occupied_density(bands: BandStructure, n_electrons: int, dens_basis: PlaneWaveBasis) -> FourierDensity:
    """Fourier coefficients of ``rho(x) = avg_q sum_{n<N} |u_{n,q}(x)|^2``.

    Coefficient at K is ``|cell|^{-1/2} avg_q sum_n <u_{n,q}, e^{-iK.x} u_{n,q}>``.
    """
    basis = bands.basis
    table = basis.difference_table(dens_basis)
    rho = np.zeros(len(dens_basis), dtype=complex)
    for w, vecs in zip(bands.grid.weights, bands.vectors):
        occ = vecs[:, :n_electrons]
        # P[G, G'] = sum_n c_n(G) conj c_n(G'), contributes to K = G - G'
        p = occ @ occ.conj().T
        np.add.at(rho, table[table >= 0], w * p[table >= 0])
    return FourierDensity(dens_basis, rho / np.sqrt(bands.cell_volume), real=True)


def scf_periodic(rho_nuc: FourierDensity, n_electrons: int, basis: PlaneWaveBasis,
                 grid: BrillouinGrid, mixing: float = 0.3, tol: float = 1e-8,
                 max_iter: int = 500, threads=None, return_history=False):
    """Damped fixed point ``V <- (1 - a) V + a v_c(rho[V] - rho_nuc)``.

    ``rho_nuc`` must be given on a basis containing every difference of
    ``basis`` vectors (e.g. cutoff ``4 * e_cut``) and carry ``N`` electrons'
    worth of positive charge per cell.
    """
    dens_basis = rho_nuc.basis
    vol = basis.rl.lattice.volume
    total = rho_nuc.coeffs[dens_basis.zero_index].real * np.sqrt(vol)
    if abs(total - n_electrons) > 1e-8 * max(1, n_electrons):
        raise ValueError(f"nuclear charge per cell is {total}, expected {n_electrons}")
    pot = PeriodicPotential.zeros(dens_basis)
    history = []
    for it in range(1, max_iter + 1):
        bands = solve_bands(pot, basis, grid, threads)
        fermi_data(bands, n_electrons)  # raises MetallicSystem when the gap closes
        rho = occupied_density(bands, n_electrons, dens_basis)
        target = vc_apply(FourierDensity(dens_basis, rho.coeffs - rho_nuc.coeffs))
        new = (1 - mixing) * pot.coeffs + mixing * target.coeffs
        change = float(np.max(np.abs(new - pot.coeffs)))
        history.append(change)
        pot = PeriodicPotential(dens_basis, new, real=True)
        log.debug("scf iteration %d: max change %.3e", it, change)
        if change < tol:
            return (pot, history) if return_history else pot
    raise MaxIterations(f"SCF did not converge in {max_iter} iterations (last change {change:.3e})")


def density_basis(basis: PlaneWaveBasis) -> PlaneWaveBasis:
    """Basis holding every difference ``G - G'`` of ``basis`` vectors."""
    return plane_wave_basis(basis.rl, 4.0 * basis.e_cut)


def growth_slope(levels, dim: int, fraction: float = 0.5) -> float:
    """Log-log slope of ``e_m`` against ``m`` on the top ``fraction`` of ``levels``.

    Levels are shifted so that the lowest one is 1, which removes the offset
    of the potential without changing the asymptotic exponent.
    """
    e = np.sort(np.asarray(levels, dtype=float))
    e = e - e[0] + 1.0
    m = np.arange(1, len(e) + 1)
    start = int(len(e) * (1 - fraction))
    slope, _ = np.polyfit(np.log(m[start:]), np.log(e[start:]), 1)
    return float(slope)


def decay_constants(bands: BandStructure, n: int, kset) -> np.ndarray:
    """``|<u_{m,q'}, e^{-iK.x} u_{n,q'}>| m^{2/3} / (1 + |K|^2)`` for every K, q' and band m.

    Shape ``(n_K, n_q, n_bands)`` with ``m`` counted from 1.
    """
    kset = np.atleast_2d(kset)
    m = np.arange(1, bands.n_bands + 1) ** (2.0 / 3.0)
    out = np.zeros((len(kset), len(bands.grid), bands.n_bands))
    for i, K in enumerate(kset):
        k2 = float(np.sum(bands.basis.rl.to_cartesian(K) ** 2))
        for j, c in enumerate(bands.vectors):
            elem = pw_overlaps(bands.basis, c, c[:, [n]], K)[:, 0]
            out[i, j] = np.abs(elem) * m / (1.0 + k2)
    return out
