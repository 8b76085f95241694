"""Linear and nonlinear Hartree response of periodic insulators.

Plane-wave Bloch bands, Adler-Wiser polarization matrices, macroscopic
permittivity by homogenization, and density-matrix dynamics on supercells.
"""

__version__ = "0.1.0"

from .bands import (BandStructure, FermiData, PeriodicPotential, bloch_matrix_element, density_basis,
                    fermi_data, occupied_density, scf_periodic, solve_bands)
from .coulomb import FourierDensity, FourierPotential, d_inner, d_pairing, vc_apply
from .dielectric import MacroPermittivity, a_scalar_probe, eps_m, macro_poisson_solve
from .dynamics import (ExternalDrive, SupercellModel, dyson_term, effective_picard,
                       hartree_evolve, unitary_propagator)
from .errors import *  # noqa: F401,F403
from .lattice import Lattice, BrillouinGrid, PlaneWaveBasis, build_reciprocal, bz_grid, plane_wave_basis
from .response import PolarizationBlock, ResponseQuery, e_eta_block, screened_potential, t_eta
