"""Density-matrix dynamics on a finite supercell sampled at the Gamma point.

The supercell of ``n_cells`` primitive cells carries the plane waves
``p + G`` for every commensurate ``p`` and every primitive basis vector
``G``. Its Hamiltonian is the mean-field one-body operator; all matrices
below are expressed in its eigenbasis, where ``gamma0`` is diagonal with
the ``N * n_cells`` lowest states occupied.

Perturbations ``Q = gamma - gamma0`` are propagated in three ways:

* Dyson terms and the effective (linear-in-Q) equation by a stepwise
  trapezoidal Duhamel formula, exact for the free part;
* a unitary propagator for a prescribed potential (exponential midpoint);
* the self-consistent Hartree dynamics by an exponential midpoint step
  whose midpoint potential is found by fixed-point iteration.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bands import PeriodicPotential, fermi_from_levels
from .coulomb import FourierDensity, coulomb_symbol, d_pairing
from .errors import KViolation, MaxPicardIterations
from .lattice import Lattice, PlaneWaveBasis, build_reciprocal, fold_fractional, plane_wave_basis

log = logging.getLogger(__name__)


def hs_norm(a) -> float:
    return float(np.linalg.norm(a))


def supercell_coords(prim_basis: PlaneWaveBasis, counts) -> np.ndarray:
    """Integer supercell coordinates ``n * G + l`` of the plane waves ``p + G``."""
    counts = np.asarray(counts, dtype=int)
    labels = np.array(list(itertools.product(*[range(c) for c in counts])), dtype=int)
    _, shift = fold_fractional(labels / counts)
    labels = labels - shift * counts  # l / n folded into (-1/2, 1/2]
    out = [counts * g + l for l in labels for g in prim_basis.coords]
    return np.array(out, dtype=int)


def difference_basis(rl, coords) -> PlaneWaveBasis:
    diff = (coords[:, None, :] - coords[None, :, :]).reshape(-1, coords.shape[1])
    uniq = np.unique(diff, axis=0)
    return PlaneWaveBasis.from_coords(rl, uniq)


@dataclass
class SupercellModel:
    lattice: Lattice
    basis: PlaneWaveBasis
    dens_basis: PlaneWaveBasis
    h0_pw: np.ndarray
    energies: np.ndarray
    phi: np.ndarray
    n_occ: int
    counts: tuple = (1,)

    def __post_init__(self):
        self._table = self.basis.difference_table(self.dens_basis)
        self._kc = coulomb_symbol(self.dens_basis.cart)
        self.gamma0_diag = (np.arange(self.size) < self.n_occ).astype(float)

    @classmethod
    def build(cls, lattice: Lattice, potential: PeriodicPotential, e_cut: float,
              n_cells, n_electrons: int) -> "SupercellModel":
        """Supercell of ``n_cells`` copies of ``lattice`` with ``V`` periodic on the primitive cell."""
        d = lattice.dim
        counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(n_cells), (d,)))
        prim_rl = build_reciprocal(lattice)
        prim = plane_wave_basis(prim_rl, e_cut)
        sup = lattice.supercell(counts)
        rl = build_reciprocal(sup)
        coords = supercell_coords(prim, counts)
        basis = PlaneWaveBasis.from_coords(rl, coords)
        dens = difference_basis(rl, coords)
        # potential: couples only differences that are primitive reciprocal vectors
        diff = coords[:, None, :] - coords[None, :, :]
        n = np.asarray(counts)
        h = np.zeros((len(coords),) * 2, dtype=complex)
        divisible = np.all(diff % n == 0, axis=-1)
        pb = potential.basis
        for i, j in zip(*np.nonzero(divisible)):
            k = pb.index(diff[i, j] // n)
            if k >= 0:
                h[i, j] = potential.coeffs[k]
        h /= np.sqrt(lattice.volume)
        h[np.diag_indices_from(h)] += basis.kinetic()
        h = 0.5 * (h + h.conj().T)
        e, phi = np.linalg.eigh(h)
        n_occ = n_electrons * int(np.prod(counts))
        fermi_from_levels(e[None, :], n_occ)  # raises MetallicSystem for a closed gap
        return cls(sup, basis, dens, h, e, phi, n_occ, counts)

    @property
    def size(self) -> int:
        return len(self.energies)

    @property
    def volume(self) -> float:
        return self.lattice.volume

    @property
    def gap(self) -> float:
        return float(self.energies[self.n_occ] - self.energies[self.n_occ - 1])

    @property
    def gamma0(self) -> np.ndarray:
        return np.diag(self.gamma0_diag).astype(complex)

    def to_eigen(self, pw):
        return self.phi.conj().T @ pw @ self.phi

    def to_pw(self, eig):
        return self.phi @ eig @ self.phi.conj().T

    def potential_pw(self, coeffs) -> np.ndarray:
        """Multiplication by the field with coefficients ``coeffs`` on the density basis."""
        padded = np.append(np.asarray(coeffs, dtype=complex), 0.0)
        return padded[self._table] / np.sqrt(self.volume)

    def potential_matrix(self, coeffs) -> np.ndarray:
        """Same operator in the eigenbasis."""
        return self.to_eigen(self.potential_pw(coeffs))

    def density(self, q_eig) -> np.ndarray:
        """Coefficients of ``rho_Q`` on the density basis."""
        p = self.to_pw(q_eig).ravel()
        t = self._table.ravel()
        n = len(self.dens_basis)
        re = np.bincount(t, weights=p.real, minlength=n)
        im = np.bincount(t, weights=p.imag, minlength=n)
        return (re + 1j * im) / np.sqrt(self.volume)

    def hartree(self, rho_coeffs) -> np.ndarray:
        return self._kc * rho_coeffs

    def coulomb_pairing(self, f, g) -> complex:
        return complex(np.sum(np.conj(f) * self._kc * g))

    def free_phases(self, dt) -> np.ndarray:
        return np.exp(-1j * self.energies * dt)

    def field(self, coeffs, real=True) -> FourierDensity:
        return FourierDensity(self.dens_basis, coeffs, real)


@dataclass
class DriveTerm:
    profile: np.ndarray  # coefficients on the model's density basis
    g: Callable[[float], float]
    dg: Callable[[float], float] | None = None


@dataclass
class ExternalDrive:
    """Separable space-time field ``sum_j g_j(t) profile_j``.

    ``kind`` is ``"potential"`` for a prescribed potential or ``"charge"`` for
    an external charge acting through the Coulomb kernel.
    """

    terms: list = field(default_factory=list)
    kind: str = "potential"

    def value(self, t) -> np.ndarray | None:
        if not self.terms:
            return None
        return sum(term.g(t) * np.asarray(term.profile, dtype=complex) for term in self.terms)

    def derivative(self, t) -> np.ndarray | None:
        if not self.terms:
            return None
        if any(term.dg is None for term in self.terms):
            raise ValueError("closed-form time derivatives are required for every term")
        return sum(term.dg(t) * np.asarray(term.profile, dtype=complex) for term in self.terms)

    def matrix(self, model: SupercellModel, t) -> np.ndarray:
        v = self.value(t)
        if v is None:
            return np.zeros((model.size, model.size), dtype=complex)
        if self.kind == "charge":
            v = -model.hartree(v)
        return model.potential_matrix(v)

    def sup_norm(self, model, t) -> float:
        return float(np.linalg.norm(self.matrix(model, t), 2))


@dataclass
class DensityMatrixState:
    t: float
    Q: np.ndarray
    rho: np.ndarray | None = None


@dataclass
class Trajectory:
    times: np.ndarray
    Q: np.ndarray  # (n_t, M, M)
    picard_iterations: np.ndarray | None = None

    def state(self, i, model=None) -> DensityMatrixState:
        rho = model.density(self.Q[i]) if model is not None else None
        return DensityMatrixState(float(self.times[i]), self.Q[i], rho)


def _conj_phase(ph, a):
    """``E a E*`` for diagonal ``E = diag(ph)``."""
    return ph[:, None] * a * ph.conj()[None, :]


def free_evolve(model: SupercellModel, q, dt):
    return _conj_phase(model.free_phases(dt), q)


def _comm(a, b):
    return a @ b - b @ a


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 1 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return t


def dyson_terms(model: SupercellModel, drive: ExternalDrive, n_max: int, t_grid,
                q0=None) -> np.ndarray:
    """All Dyson orders ``0..n_max`` on the time grid, shape ``(n_max+1, n_t, M, M)``.

    Order 0 is the free evolution of ``q0``; order 1 is driven by
    ``[v, gamma0 + order0]`` and order ``n`` by ``[v, order n-1]``. Each
    Duhamel integral is accumulated step by step with the trapezoidal rule.
    """
    t = _check_grid(t_grid)
    m = model.size
    q0 = np.zeros((m, m), dtype=complex) if q0 is None else np.asarray(q0, dtype=complex)
    out = np.zeros((n_max + 1, len(t), m, m), dtype=complex)
    out[0, 0] = q0
    for k in range(len(t) - 1):
        out[0, k + 1] = free_evolve(model, out[0, k], t[k + 1] - t[k])
    v = np.array([drive.matrix(model, s) for s in t])
    g0 = model.gamma0
    for n in range(1, n_max + 1):
        src = out[n - 1] + (g0 if n == 1 else 0.0)
        for k in range(len(t) - 1):
            dt = t[k + 1] - t[k]
            ph = model.free_phases(dt)
            left = out[n, k] - 0.5j * dt * _comm(v[k], src[k])
            out[n, k + 1] = _conj_phase(ph, left) - 0.5j * dt * _comm(v[k + 1], src[k + 1])
    return out


def dyson_term(model, drive, n: int, t_grid, q0=None) -> np.ndarray:
    if n < 1:
        raise ValueError("Dyson order must be >= 1")
    return dyson_terms(model, drive, n, t_grid, q0)[n]


def dyson_envelope(terms: np.ndarray, drive_integral: float) -> np.ndarray:
    """Ratios ``(|Q_{n+1}| / |Q_n|) (n+1) / int |v|`` at the final time, operator norm."""
    norms = np.array([np.linalg.norm(terms[n, -1], 2) for n in range(1, terms.shape[0])])
    n = np.arange(1, len(norms))
    return norms[1:] / norms[:-1] * (n + 1) / drive_integral


def drive_integral(model, drive, t_grid) -> float:
    t = _check_grid(t_grid)
    return float(np.trapezoid([drive.sup_norm(model, s) for s in t], t))


def effective_picard(model: SupercellModel, drive: ExternalDrive, q0, t_grid,
                     tol: float = 1e-13, max_iter: int = 100) -> Trajectory:
    """Effective dynamics ``Q' = -i[H0, Q] - i[w(t), gamma0 + Q]`` in Duhamel form.

    Each step applies the trapezoidal rule to the Duhamel integral over the
    step; the implicit end-point term is resolved by fixed-point iteration.
    """
    t = _check_grid(t_grid)
    m = model.size
    q = np.zeros((len(t), m, m), dtype=complex)
    q[0] = np.zeros((m, m)) if q0 is None else q0
    g0 = model.gamma0
    its = np.zeros(len(t), dtype=int)
    w_prev = drive.matrix(model, t[0])
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        w_next = drive.matrix(model, t[k + 1])
        base = _conj_phase(model.free_phases(dt), q[k] - 0.5j * dt * _comm(w_prev, g0 + q[k]))
        cur = base - 0.5j * dt * _comm(w_next, g0 + q[k])
        for it in range(1, max_iter + 1):
            new = base - 0.5j * dt * _comm(w_next, g0 + cur)
            diff = hs_norm(new - cur)
            cur = new
            if diff < tol:
                break
        else:
            raise MaxPicardIterations(f"step {k}: fixed point not reached (last change {diff:.3e})")
        q[k + 1] = 0.5 * (cur + cur.conj().T)
        its[k + 1] = it
        w_prev = w_next
    return Trajectory(t, q, its)


def _expm_hermitian(h, dt):
    lam, vec = np.linalg.eigh(0.5 * (h + h.conj().T))
    return (vec * np.exp(-1j * dt * lam)) @ vec.conj().T


def _polar(u):
    a, _, bh = np.linalg.svd(u)
    return a @ bh


def unitary_propagator(model: SupercellModel, drive: ExternalDrive, t_grid,
                       drift_tol: float = 1e-10) -> np.ndarray:
    """``U(t_k, t_0)`` in the eigenbasis by exponential midpoint steps."""
    t = _check_grid(t_grid)
    m = model.size
    u = np.zeros((len(t), m, m), dtype=complex)
    u[0] = np.eye(m)
    h0 = np.diag(model.energies).astype(complex)
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        h = h0 + drive.matrix(model, t[k] + 0.5 * dt)
        nxt = _expm_hermitian(h, dt) @ u[k]
        if hs_norm(nxt.conj().T @ nxt - np.eye(m)) > drift_tol:
            nxt = _polar(nxt)
        u[k + 1] = nxt
    return u


def k_violation(model: SupercellModel, q) -> float:
    """Distance of the spectrum of ``gamma0 + Q`` outside ``[0, 1]``."""
    lam = np.linalg.eigvalsh(model.gamma0 + q)
    return float(max(0.0, -lam.min(), lam.max() - 1.0))


def projector_residual(model: SupercellModel, q) -> float:
    g = model.gamma0 + q
    return hs_norm(g @ g - g)


def energy(model: SupercellModel, q, nu=None) -> float:
    """``Tr(H0 Q) - D(rho_Q, nu) + D(rho_Q, rho_Q) / 2``."""
    rho = model.density(q)
    e = float(np.real(np.sum(model.energies * np.diag(q))))
    e += 0.5 * model.coulomb_pairing(rho, rho).real
    if nu is not None:
        e -= model.coulomb_pairing(rho, nu).real
    return e


@dataclass
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    work: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.energy - self.energy[0] + self.work

    @property
    def max_residual(self) -> float:
        return float(np.abs(self.residual).max())


@dataclass
class HartreeResult:
    trajectory: Trajectory
    report: EnergyReport
    densities: np.ndarray
    trace: np.ndarray
    k_violation: np.ndarray
    projector_residual: np.ndarray


def _check_in_k(model, q0, tol=1e-8):
    if hs_norm(q0 - q0.conj().T) > 1e-12:
        raise ValueError("Q0 must be Hermitian")
    viol = k_violation(model, q0)
    if viol > tol:
        raise KViolation(f"initial state violates the Pauli bounds by {viol:.3e}")


def hartree_evolve(model: SupercellModel, nu_drive: ExternalDrive | None, q0, t_grid,
                   tol: float = 1e-13, max_iter: int = 200, k_tol: float = 1e-6) -> HartreeResult:
    """Self-consistent Hartree dynamics driven by an external charge.

    ``gamma(t_{k+1}) = e^{-i dt H} gamma(t_k) e^{i dt H}`` with
    ``H = H0 + v_c(rho_mid - nu(t_mid))`` and ``rho_mid`` the mean of the
    densities at both ends of the step (fixed-point iteration).
    """
    t = _check_grid(t_grid)
    m = model.size
    q0 = np.zeros((m, m), dtype=complex) if q0 is None else np.asarray(q0, dtype=complex)
    _check_in_k(model, q0)
    nu_drive = nu_drive or ExternalDrive(kind="charge")
    g0 = model.gamma0
    h0 = np.diag(model.energies).astype(complex)
    n_t = len(t)
    qs = np.zeros((n_t, m, m), dtype=complex)
    rhos = np.zeros((n_t, len(model.dens_basis)), dtype=complex)
    its = np.zeros(n_t, dtype=int)
    qs[0] = q0
    rhos[0] = model.density(q0)
    for k in range(n_t - 1):
        dt = t[k + 1] - t[k]
        nu_mid = nu_drive.value(t[k] + 0.5 * dt)
        nu_mid = 0.0 if nu_mid is None else nu_mid
        gam = g0 + qs[k]
        rho_next = rhos[k]
        for it in range(1, max_iter + 1):
            w = model.hartree(0.5 * (rhos[k] + rho_next) - nu_mid)
            u = _expm_hermitian(h0 + model.potential_matrix(w), dt)
            new_q = u @ gam @ u.conj().T - g0
            new_rho = model.density(new_q)
            change = hs_norm(new_q - qs[k + 1]) if it > 1 else np.inf
            qs[k + 1] = new_q
            rho_next = new_rho
            if change < tol:
                break
        else:
            raise MaxPicardIterations(f"step {k}: self-consistent midpoint not reached ({change:.3e})")
        qs[k + 1] = 0.5 * (qs[k + 1] + qs[k + 1].conj().T)
        rhos[k + 1] = model.density(qs[k + 1])
        its[k + 1] = it
        viol = k_violation(model, qs[k + 1])
        if viol > k_tol:
            raise KViolation(f"Pauli bounds violated by {viol:.3e} at t = {t[k + 1]}")
    report = energy_report(model, nu_drive, Trajectory(t, qs), rhos)
    return HartreeResult(
        Trajectory(t, qs, its), report, rhos,
        np.array([np.trace(q).real for q in qs]),
        np.array([k_violation(model, q) for q in qs]),
        np.array([projector_residual(model, q) for q in qs]),
    )


def energy_report(model, nu_drive, traj: Trajectory, rhos=None) -> EnergyReport:
    t = traj.times
    rhos = np.array([model.density(q) for q in traj.Q]) if rhos is None else rhos
    en = np.array([energy(model, q, nu_drive.value(s)) for q, s in zip(traj.Q, t)])
    if nu_drive.terms:
        power = np.array([model.coulomb_pairing(r, nu_drive.derivative(s)).real for r, s in zip(rhos, t)])
    else:
        power = np.zeros(len(t))
    work = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (power[1:] + power[:-1]))])
    return EnergyReport(t, en, work)


def q_norm_diagnostics(model: SupercellModel, q) -> dict:
    """Pieces of the weighted norm with ``(1 - Laplacian)^{1/2}`` weights."""
    s_pw = np.sqrt(1.0 + np.sum(model.basis.cart**2, axis=1))
    s = model.to_eigen(np.diag(s_pw).astype(complex))
    occ = model.gamma0_diag.astype(bool)
    emp = ~occ
    sq = s @ q
    off = q.copy()
    off[np.ix_(occ, occ)] = 0
    off[np.ix_(emp, emp)] = 0
    pp = np.zeros_like(q)
    mm = np.zeros_like(q)
    pp[np.ix_(emp, emp)] = q[np.ix_(emp, emp)]
    mm[np.ix_(occ, occ)] = q[np.ix_(occ, occ)]

    def nuclear(a):
        return float(np.linalg.svd(a, compute_uv=False).sum())

    return {
        "hs_weighted": hs_norm(sq),
        "hs_offdiag_weighted": hs_norm(s @ off),
        "trace_pp": nuclear(s @ pp @ s),
        "trace_mm": nuclear(s @ mm @ s),
    }


def static_first_order(model: SupercellModel, v_eig) -> np.ndarray:
    """``Q = (1/2 pi i) oint R V R dz`` in the eigenbasis: ``V_ij (g_i - g_j)/(e_i - e_j)``."""
    e, g = model.energies, model.gamma0_diag
    de = e[:, None] - e[None, :]
    dg = g[:, None] - g[None, :]
    out = np.zeros_like(v_eig, dtype=complex)
    mask = dg != 0
    out[mask] = v_eig[mask] * dg[mask] / de[mask]
    return out


def write_trajectory_csv(result: HartreeResult, path):
    cols = ["t", "trace", "energy", "work_integral", "budget_residual", "k_violation", "projector_residual"]
    r = result.report
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, s in enumerate(r.times):
            vals = [s, result.trace[i], r.energy[i], r.work[i], r.residual[i],
                    result.k_violation[i], result.projector_residual[i]]
            fh.write(",".join(f"{v:.15e}" for v in vals) + "\n")


def smooth_pulse(center: float, width: float, amplitude: float = 1.0):
    """Compactly supported ``C^inf`` bump and its derivative."""

    def g(t):
        x = (t - center) / width
        return amplitude * np.exp(-1.0 / (1.0 - x * x)) * np.e if abs(x) < 1 else 0.0

    def dg(t):
        x = (t - center) / width
        if abs(x) >= 1:
            return 0.0
        return g(t) * (-2.0 * x / (1.0 - x * x) ** 2) / width

    return g, dg


def sinusoid(omega: float, amplitude: float = 1.0, ramp: float = 0.0):
    """``a sin(omega t)`` (optionally times ``1 - e^{-t/ramp}``) and its derivative."""

    def g(t):
        r = 1.0 - np.exp(-t / ramp) if ramp > 0 else 1.0
        return amplitude * r * np.sin(omega * t)

    def dg(t):
        if ramp > 0:
            r, dr = 1.0 - np.exp(-t / ramp), np.exp(-t / ramp) / ramp
        else:
            r, dr = 1.0, 0.0
        return amplitude * (dr * np.sin(omega * t) + r * omega * np.cos(omega * t))

    return g, dg


def single_mode(model: SupercellModel, coords, amplitude=1.0) -> np.ndarray:
    """Real profile ``a (e^{iK.x} + e^{-iK.x})`` in density-basis coefficients."""
    c = np.zeros(len(model.dens_basis), dtype=complex)
    k = model.dens_basis.index(coords)
    mk = model.dens_basis.index([-x for x in np.atleast_1d(coords)])
    if k < 0 or mk < 0:
        raise KeyError(f"mode {coords} outside the density basis")
    s = np.sqrt(model.volume) * amplitude
    c[k] += s
    c[mk] += s
    return c
