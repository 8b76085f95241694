"""Macroscopic permittivity below the gap, checked against a small-q screening probe."""

import numpy as np

from rpa_crystal import PeriodicPotential, build_reciprocal, bz_grid, density_basis, fermi_data, plane_wave_basis, solve_bands
from rpa_crystal.dielectric import eps_m, small_q_limit
from rpa_crystal.lattice import Lattice

lattice = Lattice.cubic(2.0, 1)
rl = build_reciprocal(lattice)
basis = plane_wave_basis(rl, 20.0)
bands = solve_bands(PeriodicPotential.cosine(density_basis(basis), {(1,): 0.5}), basis, bz_grid(rl, 9))
fermi = fermi_data(bands, 1)

print(f"gap {fermi.gap:.4f}")
print(" omega/g   eps_M     1 + L     1/probe")
for frac in np.linspace(0.0, 0.8, 5):
    om = frac * fermi.gap
    e = eps_m(bands, fermi, om)
    probe = small_q_limit(bands, fermi, om, [1.0])
    # local fields lower eps_M below the bare 1 + L value
    print(f"{frac:7.2f}  {e.eps[0, 0]:8.5f}  {1 + e.L[0, 0]:8.5f}  {1 / probe:8.5f}")
