"""Periodic Coulomb kernel on Fourier-represented densities and potentials.

Real-space fields are expanded as ``f(x) = |cell|^{-1/2} sum_K f_K e^{iK.x}``.
The kernel symbol ``4 pi / |k|^2`` is used in every dimension and the
``K = 0`` mode is dropped (neutralizing background).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import PlaneWaveBasis

FOUR_PI = 4.0 * np.pi
SQRT_FOUR_PI = np.sqrt(FOUR_PI)


@dataclass
class FourierField:
    basis: PlaneWaveBasis
    coeffs: np.ndarray
    real: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).copy()
        if c.shape != (len(self.basis),):
            raise ValueError(f"expected {len(self.basis)} coefficients, got shape {c.shape}")
        if self.real:
            # enforce f(-K) = conj f(K)
            neg = self.basis.negated_indices()
            c = 0.5 * (c + np.conj(c[neg]))
        self.coeffs = c

    @classmethod
    def zeros(cls, basis, real=True):
        return cls(basis, np.zeros(len(basis), dtype=complex), real)

    @classmethod
    def from_modes(cls, basis, modes: dict, real=False):
        """Build from ``{integer-coordinate tuple: coefficient}``."""
        c = np.zeros(len(basis), dtype=complex)
        for k, v in modes.items():
            i = basis.index(k)
            if i < 0:
                raise KeyError(f"mode {k} is not in the basis")
            c[i] = v
        return cls(basis, c, real)

    def to_grid(self, n_points) -> np.ndarray:
        """Evaluate on a uniform real-space grid (fractional coordinates ``j / n``)."""
        from .lattice import TWO_PI

        n = np.broadcast_to(np.atleast_1d(n_points), (self.basis.dim,))
        axes = [np.arange(m) / m for m in n]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        phase = np.exp(1j * TWO_PI * np.tensordot(mesh, self.basis.coords.T, axes=1))
        return phase @ self.coeffs / np.sqrt(self.basis.rl.lattice.volume)


class FourierDensity(FourierField):
    pass


class FourierPotential(FourierField):
    pass


def coulomb_symbol(kvecs) -> np.ndarray:
    """``4 pi / |k|^2`` with the value 0 at ``k = 0``."""
    k2 = np.sum(np.atleast_2d(kvecs) ** 2, axis=-1)
    out = np.zeros_like(k2)
    nz = k2 > 1e-24
    out[nz] = FOUR_PI / k2[nz]
    return out


def coulomb_half_symbol(kvecs) -> np.ndarray:
    """``sqrt(4 pi) / |k|`` with the value 0 at ``k = 0``."""
    return np.sqrt(coulomb_symbol(kvecs))


def vc_apply(rho: FourierField) -> FourierPotential:
    """Periodic Hartree potential of ``rho``."""
    return FourierPotential(rho.basis, coulomb_symbol(rho.basis.cart) * rho.coeffs, rho.real)


def vc_half_apply(f: FourierField) -> FourierPotential:
    return FourierPotential(f.basis, coulomb_half_symbol(f.basis.cart) * f.coeffs, f.real)


def g0_half_apply(basis: PlaneWaveBasis, coeffs) -> np.ndarray:
    """Coulomb square root on cell-periodic functions; kills the constant mode."""
    return coulomb_half_symbol(basis.cart) * np.asarray(coeffs)


def d_pairing(f: FourierField, g: FourierField) -> complex:
    """``4 pi sum_{K != 0} conj(f_K) g_K / |K|^2``, the cell Coulomb pairing.

    Equals ``int_cell conj(f) v_c(g)`` for the field normalization used here.
    """
    if f.basis is not g.basis and len(f.basis) != len(g.basis):
        raise ValueError("fields live on different bases")
    return complex(np.sum(np.conj(f.coeffs) * coulomb_symbol(f.basis.cart) * g.coeffs))


def d_inner(f: FourierField, g: FourierField) -> float:
    """Real Coulomb pairing; raises if the pairing is not real."""
    val = d_pairing(f, g)
    if abs(val.imag) > 1e-12 * max(1.0, abs(val)):
        raise ValueError(f"Coulomb pairing is not real: {val}")
    return val.real
