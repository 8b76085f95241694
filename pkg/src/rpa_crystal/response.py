"""Frequency-domain linear response of the crystal (Adler-Wiser matrices).

``T^eta_{K,K'}(omega, q)`` is the band/zone sum

    sum_{n,m} s_{nm} avg_{q'} <u_{m,q'}, e^{-iK.x} u_{n,q+q'}> <u_{n,q+q'}, e^{iK'.x} u_{m,q'}>
                              / (e_{n,q+q'} - e_{m,q'} - omega - i eta)

with ``s_{nm} = +1`` for n occupied / m empty and ``-1`` for the reverse.
The density response to a potential ``e^{i(q+K').x}`` has coefficient
``T_{K,K'} / |cell|`` on ``e^{i(q+K).x}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bands import BandStructure, FermiData, pw_overlaps
from .coulomb import FOUR_PI, coulomb_half_symbol
from .errors import DegenerateDenominator, FrequencyOutOfGap, SingularScreening
from .lattice import PlaneWaveBasis

_DENOM_TOL = 1e-12


@dataclass
class ResponseQuery:
    omegas: np.ndarray
    eta: float
    q_frac: np.ndarray
    kset: np.ndarray  # integer coordinates, shape (M_K, d)

    def __post_init__(self):
        self.omegas = np.atleast_1d(np.asarray(self.omegas, dtype=float))
        self.q_frac = np.atleast_1d(np.asarray(self.q_frac, dtype=float))
        self.kset = np.atleast_2d(np.asarray(self.kset, dtype=int))
        if self.kset.shape[1] != self.q_frac.shape[0]:
            self.kset = self.kset.reshape(-1, self.q_frac.shape[0])
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


def kset_from_cutoff(basis: PlaneWaveBasis, e_cut: float) -> np.ndarray:
    """Basis vectors with ``|K|^2/2 <= e_cut``, in basis order."""
    keep = 0.5 * np.sum(basis.cart**2, axis=1) <= e_cut + 1e-12
    return basis.coords[keep]


@dataclass
class PolarizationBlock:
    query: ResponseQuery
    qk: np.ndarray  # Cartesian q + K for each K in the set
    cell_volume: float
    T: np.ndarray  # (n_omega, M_K, M_K)
    E: np.ndarray | None = field(default=None)

    @property
    def chi0(self) -> np.ndarray:
        """Bloch matrices of the independent-particle density response."""
        return self.T / self.cell_volume

    def dressed(self) -> np.ndarray:
        """``v_c^{1/2} chi0 v_c^{1/2}``: ``4 pi T / (|cell| |q+K| |q+K'|)``."""
        s = coulomb_half_symbol(self.qk)
        return self.chi0 * s[None, :, None] * s[None, None, :]

    def screening_matrix(self, i_omega: int = 0) -> np.ndarray:
        """Matrix of ``A(omega, q) = 1 - v_c^{1/2} chi0 v_c^{1/2}`` on the K-set."""
        return np.eye(self.T.shape[1]) - self.dressed()[i_omega]


def _sector_pairs(n_bands: int, n_occ: int):
    """Index pairs (m, n) with sign +1 (n occ, m empty) then -1 (m occ, n empty)."""
    occ = np.arange(n_occ)
    emp = np.arange(n_occ, n_bands)
    m1, n1 = np.meshgrid(emp, occ, indexing="ij")
    m2, n2 = np.meshgrid(occ, emp, indexing="ij")
    m = np.concatenate([m1.ravel(), m2.ravel()])
    n = np.concatenate([n1.ravel(), n2.ravel()])
    sign = np.concatenate([np.ones(m1.size), -np.ones(m2.size)])
    return m, n, sign


def _fiber_pairs(bands, q_frac, threads=None):
    """Per q': (e at q', c at q', e at q+q', c at q+q', fold shift of q+q')."""
    e1, c1, s1 = bands.shifted(q_frac, threads)
    return [(bands.energies[i], bands.vectors[i], e1[i], c1[i], s1[i]) for i in range(len(bands.grid))]


def _overlap_stack(basis, c0, c1, kset, shift):
    """``A[k, m, n] = <u_{m,q'}, e^{-iK_k.x} u_{n,q+q'}>``."""
    return np.array([pw_overlaps(basis, c0, c1, K + shift) for K in kset])


def _check_frequencies(omegas, eta, fermi):
    if eta == 0 and np.any(np.abs(omegas) >= fermi.gap):
        raise FrequencyOutOfGap(
            f"eta = 0 needs |omega| < gap = {fermi.gap:.6g}; got max |omega| = {np.abs(omegas).max():.6g}"
        )


def t_eta(bands: BandStructure, fermi: FermiData, query: ResponseQuery, threads=None) -> PolarizationBlock:
    """Sum-over-states ``T^eta`` block for every frequency of the query."""
    _check_frequencies(query.omegas, query.eta, fermi)
    nb = bands.n_bands
    m_idx, n_idx, sign = _sector_pairs(nb, fermi.n_electrons)
    mk = len(query.kset)
    out = np.zeros((len(query.omegas), mk, mk), dtype=complex)
    for w, (e0, c0, e1, c1, s1) in zip(bands.grid.weights, _fiber_pairs(bands, query.q_frac, threads)):
        a = _overlap_stack(bands.basis, c0, c1, query.kset, s1)[:, m_idx, n_idx]  # (M_K, P)
        de = e1[n_idx] - e0[m_idx]
        for io, om in enumerate(query.omegas):
            den = de - om - 1j * query.eta
            if np.any(np.abs(den) < _DENOM_TOL):
                raise DegenerateDenominator(f"vanishing denominator at omega = {om}")
            out[io] += w * (a * (sign / den)) @ a.conj().T
    qk = bands.basis.rl.to_cartesian(query.kset + query.q_frac)
    return PolarizationBlock(query, qk, bands.cell_volume, out)


def e_eta_block(block: PolarizationBlock) -> PolarizationBlock:
    """Attach ``E_{K,K'} = |q+K'| / (|cell| |q+K|) T_{K,K'}``.

    Rows with ``q + K = 0`` are set to zero (``T`` vanishes there).
    """
    norms = np.linalg.norm(block.qk, axis=1)
    inv = np.zeros_like(norms)
    nz = norms > 1e-12
    inv[nz] = 1.0 / norms[nz]
    block.E = block.T * (inv[:, None] * norms[None, :])[None] / block.cell_volume
    return block


def polarization(bands, fermi, query, threads=None) -> PolarizationBlock:
    return e_eta_block(t_eta(bands, fermi, query, threads))


def t_eta_contour(bands: BandStructure, fermi: FermiData, query: ResponseQuery,
                  n_nodes: int | None = None, left_margin: float = 1.0) -> np.ndarray:
    """``T^eta`` from the resolvent contour representation, by quadrature.

    The contour is a rectangle symmetric about the real axis with half-height
    ``2 eta / 3``, left edge ``left_margin`` below the lowest occupied level and
    right edge at the Fermi level. Each side is traversed with a smooth
    endpoint-clustering substitution and the trapezoidal rule.

    Poles may sit ``eta / 3`` from the contour, so the default node count
    scales like ``(width of the rectangle) / eta``, which gives close to
    machine precision.
    """
    if query.eta <= 0:
        raise ValueError("the contour representation needs eta > 0")
    nocc = fermi.n_electrons
    h = 2.0 * query.eta / 3.0
    if fermi.gap / 2 < query.eta / 3:
        raise ValueError("contour too close to the unoccupied spectrum; decrease eta")
    lo = bands.energies[:, :nocc].min() - left_margin
    hi = fermi.fermi
    if n_nodes is None:
        n_nodes = 4 * max(256, int(np.ceil(90.0 * (hi - lo) / query.eta)))
    z, dz = _rectangle_nodes(lo, hi, h, n_nodes)
    mk = len(query.kset)
    out = np.zeros((len(query.omegas), mk, mk), dtype=complex)
    for w, (e0, c0, e1, c1, s1) in zip(bands.grid.weights, _fiber_pairs(bands, query.q_frac)):
        a = _overlap_stack(bands.basis, c0, c1, query.kset, s1)  # [k, m, n]
        # term 1: gamma at q+q' (n occ), gamma-perp at q' (m empty)
        a1 = a[:, nocc:, :nocc]
        # term 2: gamma-perp at q+q' (n empty), gamma at q' (m occ)
        a2 = a[:, :nocc, nocc:]
        for io, om in enumerate(query.omegas):
            shift = om + 1j * query.eta
            # f1[m, n] = (1/2 pi i) oint dz / ((z - e1_n)(z - e0_m - shift))
            r_occ1 = 1.0 / (z[:, None] - e1[None, :nocc])
            r_emp0 = 1.0 / (z[:, None] - e0[None, nocc:] - shift)
            f1 = np.einsum("z,zm,zn->mn", dz, r_emp0, r_occ1) / (2j * np.pi)
            r_emp1 = 1.0 / (z[:, None] - e1[None, nocc:] + shift)
            r_occ0 = 1.0 / (z[:, None] - e0[None, :nocc])
            f2 = np.einsum("z,zm,zn->mn", dz, r_occ0, r_emp1) / (2j * np.pi)
            b1 = a1.reshape(mk, -1)
            b2 = a2.reshape(mk, -1)
            out[io] += w * ((b1 * f1.ravel()) @ b1.conj().T + (b2 * f2.ravel()) @ b2.conj().T)
    return out


def _side(z0, z1, n):
    """Nodes/weights on the segment z0 -> z1; ends clustered so corners carry no error."""
    t = (np.arange(n) + 0.5) / n
    p = 6
    # w(t) = t^p / (t^p + (1-t)^p) has p-1 vanishing derivatives at both ends
    num, den = t**p, t**p + (1 - t) ** p
    s = num / den
    ds = p * (t ** (p - 1) * (1 - t) ** (p - 1)) / den**2
    return z0 + (z1 - z0) * s, (z1 - z0) * ds / n


def _rectangle_nodes(lo, hi, h, n_nodes):
    per = max(n_nodes // 4, 8)
    corners = [lo - 1j * h, hi - 1j * h, hi + 1j * h, lo + 1j * h, lo - 1j * h]
    zs, ws = zip(*[_side(corners[i], corners[i + 1], per) for i in range(4)])
    return np.concatenate(zs), np.concatenate(ws)


def script_l_quadratic_form(bands: BandStructure, fermi: FermiData, omegas, potential_fibers,
                            kset) -> float:
    """``<rho, L rho>`` from the Bloch-fibered Hartree potential of ``rho``.

    ``potential_fibers[i, j, k]`` is the coefficient of ``e^{iK_k.x}`` in the
    fiber at grid point ``q_j`` of ``F_t v_c(rho)(omega_i)``; all frequencies
    must lie inside ``(-g, g)``. The frequency integral uses the trapezoidal
    rule on the given samples (a single sample is taken as is).
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if np.any(np.abs(omegas) >= fermi.gap):
        raise FrequencyOutOfGap("all frequency samples must satisfy |omega| < gap")
    phi = np.asarray(potential_fibers, dtype=complex)
    grid = bands.grid
    nocc = fermi.n_electrons
    per_omega = np.zeros(len(omegas))
    for jq, fq in enumerate(grid.frac):
        pairs = _fiber_pairs(bands, fq)
        for w, (e0, c0, e1, c1, s1) in zip(grid.weights, pairs):
            a = _overlap_stack(bands.basis, c0, c1, kset, s1)
            # <u_{n,q+q'}, e^{iK.x} u_{m,q'}> = conj A[k, m, n]; n occ at q+q', m empty at q'
            b = a[:, nocc:, :nocc].conj()
            de = e0[nocc:, None] - e1[None, :nocc]
            for io, om in enumerate(omegas):
                amp = np.tensordot(phi[io, jq], b, axes=1)
                per_omega[io] += grid.weights[jq] * w * np.sum(np.abs(amp) ** 2 / (de + om))
    per_omega *= 2.0
    if len(omegas) == 1:
        return float(per_omega[0])
    return float(np.trapezoid(per_omega, omegas))


def screened_potential(block: PolarizationBlock, nu_hat, i_omega: int = 0, rtol: float = 1e-10):
    """Solve the screening equation on one (omega, q) block.

    ``nu_hat`` are the charge coefficients at ``q + K``. Returns
    ``(sigma, W)`` with ``sigma = A^{-1} v_c^{1/2} nu`` and the screened
    potential ``W = v_c^{1/2} sigma``.
    """
    a = block.screening_matrix(i_omega)
    s = coulomb_half_symbol(block.qk)
    rhs = s * np.asarray(nu_hat, dtype=complex)
    try:
        sigma = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularScreening("screening matrix is singular") from exc
    res = np.linalg.norm(a @ sigma - rhs)
    if res > rtol * max(np.linalg.norm(rhs), 1e-300):
        raise SingularScreening(f"screening solve residual {res:.3e} above tolerance")
    return sigma, s * sigma


def static_susceptibility_block(bands, fermi, q_frac, kset) -> np.ndarray:
    """``chi0(omega = 0, q)`` Bloch matrix on the K-set."""
    return t_eta(bands, fermi, ResponseQuery([0.0], 0.0, q_frac, kset)).chi0[0]


def coulomb_weights(bands, q_frac, kset):
    """``sqrt(4 pi) / |q + K|`` on the K-set (0 where ``q + K = 0``)."""
    return coulomb_half_symbol(bands.basis.rl.to_cartesian(np.asarray(kset) + q_frac))


def write_block_csv(block: PolarizationBlock, path):
    q = block.query
    d = len(q.q_frac)
    cols = ["omega"] + [f"q{i + 1}" for i in range(d)] + ["K_index", "Kp_index", "re_T", "im_T", "re_E", "im_E"]
    lines = [",".join(cols)]
    E = block.E if block.E is not None else np.full_like(block.T, np.nan)
    for io, om in enumerate(q.omegas):
        for i in range(len(q.kset)):
            for j in range(len(q.kset)):
                t, e = block.T[io, i, j], E[io, i, j]
                lines.append(",".join(
                    [f"{om:.12g}"] + [f"{x:.12g}" for x in q.q_frac]
                    + [str(i), str(j), f"{t.real:.15e}", f"{t.imag:.15e}", f"{e.real:.15e}", f"{e.imag:.15e}"]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")



@dataclass
class AdiabaticTrace:
    alpha: float
    times: np.ndarray
    rho: np.ndarray  # (n_t, n_modes) density coefficients of the slowed response
    rho_static: np.ndarray  # instantaneous static response g(t) chi_static V

    @property
    def max_error(self) -> float:
        return float(np.max(np.linalg.norm(self.rho - self.rho_static, axis=1)))


def adiabatic_response(model, profile, pulse, alpha: float, t_samples, dt: float = 0.02) -> AdiabaticTrace:
    """First-order density response to the slowed drive ``g(alpha s) V``, read at ``s = t / alpha``.

    ``model`` is a supercell model from the dynamics module, ``profile`` the
    potential coefficients of ``V`` on its density basis and ``pulse`` the
    time envelope ``g``. The response is compared with the static
    first-order density ``g(t) rho[Q_static(V)]``.
    """
    from .dynamics import DriveTerm, ExternalDrive, dyson_term, static_first_order

    t = np.asarray(t_samples, dtype=float)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    steps = np.diff(t) / alpha
    per = max(1, int(np.ceil(steps.max() / dt))) if len(t) > 1 else 1
    s_grid = np.concatenate([[t[0] / alpha]] + [
        t[k] / alpha + np.arange(1, per + 1) * steps[k] / per for k in range(len(t) - 1)
    ])
    drive = ExternalDrive([DriveTerm(np.asarray(profile), lambda s: pulse(alpha * s))], kind="potential")
    q1 = dyson_term(model, drive, 1, s_grid)[::per]
    rho = np.array([model.density(q) for q in q1])
    v = model.potential_matrix(profile)
    rho_v = model.density(static_first_order(model, v))
    rho_static = np.array([pulse(x) for x in t])[:, None] * rho_v[None, :]
    return AdiabaticTrace(alpha, t, rho, rho_static)
