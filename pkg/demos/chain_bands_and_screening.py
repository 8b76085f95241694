"""Band structure of a 1D cosine chain and its static screening.

Run with ``python demos/chain_bands_and_screening.py``.
"""

import numpy as np

from rpa_crystal import (PeriodicPotential, ResponseQuery, build_reciprocal, bz_grid, density_basis,
                         fermi_data, plane_wave_basis, solve_bands, t_eta)
from rpa_crystal.lattice import Lattice
from rpa_crystal.response import screened_potential

lattice = Lattice.cubic(2.0, 1)
rl = build_reciprocal(lattice)
basis = plane_wave_basis(rl, 20.0)

print(" v      gap     eps_00^-1 at q = b/27")
for v in (0.1, 0.3, 0.5, 1.0):
    pot = PeriodicPotential.cosine(density_basis(basis), {(1,): v})
    bands = solve_bands(pot, basis, bz_grid(rl, 27))
    fermi = fermi_data(bands, 1)
    ks = np.array([[-1], [0], [1]])
    block = t_eta(bands, fermi, ResponseQuery([0.0], 0.0, [1 / 27], ks))
    # a unit test charge at q: the ratio of screened to bare potential is the inverse dielectric function
    _, w = screened_potential(block, np.array([0.0, 1.0, 0.0]))
    bare = 4 * np.pi / (np.pi / 27) ** 2
    print(f"{v:4.1f}  {fermi.gap:7.4f}  {w[1].real / bare:8.4f}")
