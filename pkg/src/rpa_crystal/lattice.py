"""Bravais lattices, plane-wave bases and uniform Brillouin-zone grids.

Every reciprocal vector is stored through its integer coordinates on the
dual basis ``b_1..b_d`` plus a cached Cartesian copy, so shifts such as
``K + K'`` are exact integer arithmetic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLattice

TWO_PI = 2.0 * np.pi

# half-open (-1/2, 1/2] folding; values within this distance of -1/2 go to +1/2
_FOLD_TOL = 1e-10


@dataclass(frozen=True)
class Lattice:
    """Primitive vectors stored as the rows of a ``(d, d)`` array."""

    vectors: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (1, 2, 3):
            raise InvalidLattice(f"expected a (d, d) array with d in 1..3, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidLattice("lattice vectors must be finite")
        det = np.linalg.det(a)
        scale = np.prod(np.linalg.norm(a, axis=1))
        if scale == 0.0 or abs(det) < 1e-12 * scale:
            raise InvalidLattice("primitive vectors are linearly dependent")
        a.setflags(write=False)
        object.__setattr__(self, "vectors", a)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def volume(self) -> float:
        return float(abs(np.linalg.det(self.vectors)))

    def supercell(self, n_cells) -> "Lattice":
        n = np.broadcast_to(np.asarray(n_cells, dtype=int), (self.dim,))
        return Lattice(self.vectors * n[:, None])

    @classmethod
    def cubic(cls, a: float, dim: int = 3) -> "Lattice":
        return cls(a * np.eye(dim))


@dataclass(frozen=True)
class ReciprocalLattice:
    lattice: Lattice
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def bz_volume(self) -> float:
        return float(abs(np.linalg.det(self.vectors)))

    def to_cartesian(self, coords) -> np.ndarray:
        """Map fractional (or integer) reciprocal coordinates to Cartesian."""
        return np.asarray(coords, dtype=float) @ self.vectors

    def to_fractional(self, k) -> np.ndarray:
        # k . a_j / 2pi is the j-th coordinate because a_i . b_j = 2 pi delta_ij
        return np.asarray(k, dtype=float) @ self.lattice.vectors.T / TWO_PI


def build_reciprocal(lattice: Lattice) -> ReciprocalLattice:
    """Dual vectors with ``a_i . b_j = 2 pi delta_ij``."""
    try:
        b = TWO_PI * np.linalg.inv(lattice.vectors).T
    except np.linalg.LinAlgError as exc:
        raise InvalidLattice("singular primitive-vector matrix") from exc
    b.setflags(write=False)
    return ReciprocalLattice(lattice, b)


class PlaneWaveBasis:
    """All reciprocal vectors with ``|K|^2 / 2 <= e_cut``.

    The set is closed under ``K -> -K``, always contains ``K = 0`` and is
    ordered lexicographically on the integer coordinates.
    """

    def __init__(self, rl: ReciprocalLattice, e_cut: float):
        if e_cut < 0:
            raise ValueError("e_cut must be non-negative")
        self.rl = rl
        self.e_cut = float(e_cut)
        kmax = np.sqrt(2.0 * self.e_cut)
        # |n_i| <= |K| * ||column i of B^{-1}||
        binv = np.linalg.inv(rl.vectors)
        nmax = np.floor(kmax * np.linalg.norm(binv, axis=1) + 1e-9).astype(int)
        ranges = [range(-m, m + 1) for m in nmax]
        cand = np.array(list(itertools.product(*ranges)), dtype=int).reshape(-1, rl.dim)
        cart = cand @ rl.vectors
        keep = 0.5 * np.einsum("ij,ij->i", cart, cart) <= self.e_cut * (1 + 1e-12) + 1e-14
        self.coords = cand[keep]
        self.coords.setflags(write=False)
        self.cart = self.coords @ rl.vectors
        self.cart.setflags(write=False)
        self._index = {tuple(c): i for i, c in enumerate(self.coords.tolist())}
        self._nmax = np.abs(self.coords).max(axis=0)

    @classmethod
    def from_coords(cls, rl: ReciprocalLattice, coords) -> "PlaneWaveBasis":
        """Basis on an explicit list of integer coordinates (kept in the given order)."""
        self = cls.__new__(cls)
        self.rl = rl
        coords = np.array(coords, dtype=int).reshape(-1, rl.dim)
        self.coords = coords
        self.coords.setflags(write=False)
        self.cart = coords @ rl.vectors
        self.cart.setflags(write=False)
        self.e_cut = float(0.5 * np.max(np.sum(self.cart**2, axis=1))) if len(coords) else 0.0
        self._index = {tuple(c): i for i, c in enumerate(coords.tolist())}
        if len(self._index) != len(coords):
            raise ValueError("duplicate basis vectors")
        self._nmax = np.abs(coords).max(axis=0)
        return self

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def size(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.rl.dim

    @property
    def zero_index(self) -> int:
        return self._index[(0,) * self.dim]

    def index(self, coords) -> int:
        """Position of the integer vector ``coords``, or -1 if outside the basis."""
        return self._index.get(tuple(int(c) for c in np.atleast_1d(coords)), -1)

    def __contains__(self, coords) -> bool:
        return self.index(coords) >= 0

    def shifted_indices(self, shift) -> np.ndarray:
        """For each basis vector G, the position of ``G + shift`` (or -1)."""
        shift = np.asarray(shift, dtype=int)
        return np.array([self._index.get(tuple(c), -1) for c in (self.coords + shift).tolist()])

    def negated_indices(self) -> np.ndarray:
        return np.array([self._index[tuple(c)] for c in (-self.coords).tolist()])

    def difference_table(self, other: "PlaneWaveBasis | None" = None) -> np.ndarray:
        """``table[i, j]`` = position in ``other`` of ``G_i - G_j`` (-1 if absent)."""
        other = self if other is None else other
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        flat = [other._index.get(tuple(c), -1) for c in diff.reshape(-1, self.dim).tolist()]
        return np.array(flat, dtype=int).reshape(len(self), len(self))

    def kinetic(self, q=None) -> np.ndarray:
        """Diagonal of ``-1/2 Delta - i q.grad + |q|^2/2``, i.e. ``|q+G|^2 / 2``."""
        k = self.cart if q is None else self.cart + np.asarray(q, dtype=float)
        return 0.5 * np.einsum("ij,ij->i", k, k)


def plane_wave_basis(rl: ReciprocalLattice, e_cut: float) -> PlaneWaveBasis:
    return PlaneWaveBasis(rl, e_cut)


def fold_fractional(frac):
    """Split fractional coordinates as ``frac = folded + shift`` with folded in (-1/2, 1/2]."""
    frac = np.asarray(frac, dtype=float)
    shift = np.ceil(frac - 0.5 - _FOLD_TOL).astype(int)
    return frac - shift, shift


def fold_to_bz(rl: ReciprocalLattice, k):
    """Write ``k = q + K`` with ``q`` in the first Brillouin zone and ``K`` in the lattice.

    Returns the Cartesian ``q`` and the integer coordinates of ``K``.
    The zone is taken half-open, ``(-1/2, 1/2]`` per fractional direction.
    """
    folded, shift = fold_fractional(rl.to_fractional(k))
    return rl.to_cartesian(folded), shift


@dataclass(frozen=True)
class BrillouinGrid:
    """Uniform ``n_1 x .. x n_d`` sampling of the zone with equal weights."""

    rl: ReciprocalLattice
    counts: tuple
    frac: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def cart(self) -> np.ndarray:
        return self.rl.to_cartesian(self.frac)

    def __len__(self) -> int:
        return len(self.frac)

    def index_of(self, frac) -> int:
        """Grid position of the (unfolded) fractional point ``frac``; -1 if off-grid."""
        n = np.asarray(self.counts)
        j = np.asarray(frac, dtype=float) * n
        ji = np.rint(j)
        if np.any(np.abs(j - ji) > 1e-8):
            return -1
        ji = ji.astype(int) % n
        return int(np.ravel_multi_index(tuple(ji), tuple(n)))

    def is_commensurate(self, q_frac) -> bool:
        return self.index_of(q_frac) >= 0

    def shift_map(self, q_frac):
        """For every grid point q', locate ``q + q'`` on the grid.

        Returns ``(idx, shifts)`` with ``q + q' = grid[idx] + shifts`` in
        fractional coordinates.
        """
        q_frac = np.asarray(q_frac, dtype=float)
        if not self.is_commensurate(q_frac):
            raise ValueError(f"q = {q_frac} is not commensurate with the grid {self.counts}")
        target = self.frac + q_frac
        idx = np.array([self.index_of(t) for t in target])
        shifts = np.rint(target - self.frac[idx]).astype(int)
        return idx, shifts


def bz_grid(rl: ReciprocalLattice, counts) -> BrillouinGrid:
    counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(counts), (rl.dim,)))
    if any(c < 1 for c in counts):
        raise ValueError("grid counts must be >= 1")
    # C-order over the integer labels, consistent with index_of
    labels = np.array(list(itertools.product(*[range(c) for c in counts])), dtype=float)
    frac, _ = fold_fractional(labels / np.asarray(counts, dtype=float))
    frac.setflags(write=False)
    n = len(frac)
    weights = np.full(n, 1.0 / n)
    weights.setflags(write=False)
    return BrillouinGrid(rl, counts, frac, weights)
