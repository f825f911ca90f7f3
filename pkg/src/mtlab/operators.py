"""Sparse operators on the truncated Fock space.

Every operator is a scipy CSR matrix on the concatenated sector vector of a
:class:`~mtlab.fock.Space`, wrapped with its domain descriptor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .fock import FockState, Space, full_space
from .model import LatticeModel


@dataclass(frozen=True, eq=False)
class SparseOperator:
    space: Space
    matrix: sps.csr_matrix
    hermitian: bool = True

    def __matmul__(self, state: FockState) -> FockState:
        return self.apply(state)

    def apply(self, state: FockState) -> FockState:
        if state.space.dim != self.space.dim:
            raise ValueError("state and operator live on different spaces")
        return FockState.from_vector(self.space, self.matrix @ state.vector(), state.symmetric)

    def __add__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.space, (self.matrix + other.matrix).tocsr(), self.hermitian and other.hermitian)

    def __sub__(self, other: "SparseOperator") -> "SparseOperator":
        return SparseOperator(self.space, (self.matrix - other.matrix).tocsr(), self.hermitian and other.hermitian)

    def scaled(self, c: complex) -> "SparseOperator":
        return SparseOperator(self.space, (c * self.matrix).tocsr(), self.hermitian and np.isreal(c))

    def hermiticity_defect(self) -> float:
        """Max deviation from Hermiticity in the weighted inner product (offset reductions excluded)."""
        w = weight_vector(self.space.with_(offset=0))
        m = sps.diags(w) @ self.matrix @ sps.diags(1.0 / w)
        diff = m - m.getH()
        return float(abs(diff).max()) if diff.nnz else 0.0

    def dump_triplets(self, path: str | Path) -> None:
        coo = self.matrix.tocoo()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "re", "im"])
            for r, c, v in zip(coo.row, coo.col, coo.data):
                w.writerow([int(r), int(c), repr(float(v.real)), repr(float(v.imag))])


# ---------------------------------------------------------------------------
# single-particle pieces


def lattice_derivative(model: LatticeModel, axis: int) -> sps.csr_matrix:
    """Central difference (f(x+a e) - f(x-a e)) / 2a on the periodic site lattice."""
    n = model.n_sites
    rows, cols, vals = [], [], []
    h = 1.0 / (2 * model.spacing)
    for x in range(n):
        rows += [x, x]
        cols += [model.neighbor(x, axis, +1), model.neighbor(x, axis, -1)]
        vals += [h, -h]
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


def dirac_one_body(model: LatticeModel, mass: float, sites=None) -> sps.csr_matrix:
    """-i sum_a alpha^a D_a + m beta on site x spin, optionally restricted to a site window."""
    alphas, beta = model.alphas(), model.beta()
    h = mass * sps.kron(sps.identity(model.n_sites), beta)
    for ax, al in enumerate(alphas):
        h = h + sps.kron(-1j * lattice_derivative(model, ax), al)
    h = h.tocsr()
    if sites is not None:
        idx = np.array([s * model.spin + r for s in sites for r in range(model.spin)])
        h = h[idx][:, idx]
    return h.tocsr()


def _slot_kron(op: sps.spmatrix, n1: int, slot: int, rank: int) -> sps.csr_matrix:
    left = sps.identity(n1 ** slot, format="csr", dtype=complex)
    right = sps.identity(n1 ** (rank - slot - 1), format="csr", dtype=complex)
    return sps.kron(sps.kron(left, op, format="csr"), right, format="csr")


def _block_diag(space: Space, blocks: list) -> sps.csr_matrix:
    return sps.block_diag(blocks, format="csr", dtype=complex)


def free_dirac(space: Space, slot: int, species: str | None = None) -> SparseOperator:
    """Free Dirac operator on one labelled slot (fermion slot k, or boson slot M + l).

    Boson slot operators act only on sectors that contain that slot.
    """
    model = space.model
    m = space.fermions
    if species is None:
        species = "x" if slot < m else "y"
    mass = model.mx if species == "x" else model.my
    h = dirac_one_body(model, mass, space.sites)
    blocks = []
    for n in range(space.nmax + 1):
        rank = m + n
        if slot < rank:
            blocks.append(_slot_kron(h, space.n1, slot, rank))
        else:
            blocks.append(sps.csr_matrix((space.sector_size(n), space.sector_size(n)), dtype=complex))
    return SparseOperator(space, _block_diag(space, blocks))


def free_fermions(space: Space) -> SparseOperator:
    model = space.model
    h = dirac_one_body(model, model.mx, space.sites)
    blocks = []
    for n in range(space.nmax + 1):
        rank = space.fermions + n
        blk = sps.csr_matrix((space.sector_size(n),) * 2, dtype=complex)
        for k in range(space.fermions):
            blk = blk + _slot_kron(h, space.n1, k, rank)
        blocks.append(blk)
    return SparseOperator(space, _block_diag(space, blocks))


def free_bosons(space: Space) -> SparseOperator:
    """dGamma(H^free_y): free Dirac operator summed over every boson slot."""
    model = space.model
    h = dirac_one_body(model, model.my, space.sites)
    blocks = []
    for n in range(space.nmax + 1):
        rank = space.fermions + n
        blk = sps.csr_matrix((space.sector_size(n),) * 2, dtype=complex)
        for l in range(n):
            blk = blk + _slot_kron(h, space.n1, space.fermions + l, rank)
        blocks.append(blk)
    return SparseOperator(space, _block_diag(space, blocks))


def number_operator(space: Space) -> SparseOperator:
    diag = np.concatenate([np.full(space.sector_size(n), float(n)) for n in range(space.nmax + 1)])
    return SparseOperator(space, sps.diags(diag, format="csr", dtype=complex))


# ---------------------------------------------------------------------------
# emission kernels


def coupling_kernel(space: Space, g: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per old fermion index i=(x,r'): arrays (new fermion idx, boson idx, value) padded to equal length.

    Entry value is g[r, r', s] * phi(y - x) for the emitted boson (y, s).
    """
    model = space.model
    spin = model.spin
    sites = space.site_list
    phi = model.phi[np.ix_(sites, sites)]  # [y_local, x_local]
    n_loc = len(sites)
    news, bos, vals = [], [], []
    for xl in range(n_loc):
        ys = np.nonzero(phi[:, xl])[0]
        for rp in range(spin):
            ni, bi, vi = [], [], []
            for r in range(spin):
                for yl in ys:
                    for s in range(spin):
                        v = g[r, rp, s] * phi[yl, xl]
                        if v != 0:
                            ni.append(xl * spin + r)
                            bi.append(yl * spin + s)
                            vi.append(v)
            news.append(ni)
            bos.append(bi)
            vals.append(vi)
    width = max((len(v) for v in vals), default=0)
    shape = (space.n1, max(width, 1))
    N, B, V = np.zeros(shape, np.int64), np.zeros(shape, np.int64), np.zeros(shape, complex)
    for i in range(space.n1):
        L = len(vals[i])
        N[i, :L], B[i, :L], V[i, :L] = news[i], bos[i], vals[i]
    return N, B, V


def emission_sum(space: Space, slot: int, n: int, kernel) -> sps.csr_matrix:
    """Map sector n -> n+1 inserting the emitted boson at every boson position (summed, no prefactor)."""
    N, B, V = kernel
    m = space.fermions
    n1 = space.n1
    rank = m + n
    ncols = space.sector_size(n)
    cols = np.arange(ncols, dtype=np.int64)
    digits = np.array(np.unravel_index(cols, (n1,) * rank)).T if rank else np.zeros((1, 0), np.int64)
    stride_new = n1 ** np.arange(rank, -1, -1, dtype=np.int64)  # rank+1 strides
    old = digits[:, slot]
    rows_all, cols_all, vals_all = [], [], []
    keep = V[old] != 0
    for pos in range(n + 1):
        new_axis = m + pos
        base = np.zeros(ncols, dtype=np.int64)
        for j in range(rank):
            if j == slot:
                continue
            p = j if j < new_axis else j + 1
            base += digits[:, j] * stride_new[p]
        rows = base[:, None] + N[old] * stride_new[slot] + B[old] * stride_new[new_axis]
        rows_all.append(rows[keep])
        cols_all.append(np.broadcast_to(cols[:, None], rows.shape)[keep])
        vals_all.append(V[old][keep])
    mat = sps.coo_matrix((np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
                         shape=(space.sector_size(n + 1), ncols))
    return mat.tocsr()


def _assemble(space: Space, blocks: dict) -> sps.csr_matrix:
    grid = [[None] * (space.nmax + 1) for _ in range(space.nmax + 1)]
    for n in range(space.nmax + 1):
        grid[n][n] = sps.csr_matrix((space.sector_size(n),) * 2, dtype=complex)
    for (r, c), blk in blocks.items():
        grid[r][c] = blk if grid[r][c] is None else grid[r][c] + blk
    return sps.bmat(grid, format="csr", dtype=complex)


def _emission_parts(space: Space, slot: int, g: np.ndarray, create: bool, annihilate: bool) -> sps.csr_matrix:
    kernel = coupling_kernel(space, g)
    blocks = {}
    k = space.offset
    for n in range(space.nmax):
        E = emission_sum(space, slot, n, kernel)
        if create:
            blocks[(n + 1, n)] = E / np.sqrt(n + 1 + k)
        if annihilate:
            # Riemann weight a^d of the absorption integral; creation carries none
            blocks[(n, n + 1)] = E.getH().tocsr() * (space.model.cell * np.sqrt(n + 1 + k) / (n + 1))
    return _assemble(space, blocks)


def _unit_coupling(spin: int, s: int) -> np.ndarray:
    g = np.zeros((spin, spin, spin), dtype=complex)
    for r in range(spin):
        g[r, r, s] = 1.0
    return g


def create(space: Space, slot: int, s: int) -> SparseOperator:
    """a_s^dagger(x_k^op): smeared creation of a spin-s boson around fermion slot k."""
    mat = _emission_parts(space, slot, _unit_coupling(space.model.spin, s), True, False)
    return SparseOperator(space, mat, False)


def annihilate(space: Space, slot: int, s: int) -> SparseOperator:
    mat = _emission_parts(space, slot, _unit_coupling(space.model.spin, s), False, True)
    return SparseOperator(space, mat, False)


def interaction(space: Space, slot: int, g: np.ndarray | None = None) -> SparseOperator:
    g = space.model.coupling if g is None else g
    mat = _emission_parts(space, slot, g, True, True)
    return SparseOperator(space, mat, space.offset == 0)


def full_hamiltonian(space: Space | LatticeModel) -> SparseOperator:
    """Sum_k (free + interaction) + dGamma(free_y); Hermitian when no bosons are frozen."""
    if isinstance(space, LatticeModel):
        space = full_space(space)
    return _cached_hamiltonian(space.model, space.fermions, space.nmax, space.offset, space.sites)


@lru_cache(maxsize=32)
def _cached_hamiltonian(model, fermions, nmax, offset, sites) -> SparseOperator:
    space = Space(model, fermions, nmax, offset, sites)
    mat = free_fermions(space).matrix + free_bosons(space).matrix
    for k in range(fermions):
        mat = mat + interaction(space, k).matrix
    return SparseOperator(space, mat.tocsr(), offset == 0)  # Hermitian in the weighted inner product


def sector_weights(space: Space) -> np.ndarray:
    """s_n = sqrt(binom(n + offset, offset)) a^{d n / 2}.

    diag(s) H diag(s)^-1 is Hermitian as a plain matrix: the a^{d n} factor undoes the
    weighted inner product and the binomial undoes the frozen-boson offset.
    """
    from math import comb

    cell = space.model.cell
    return np.array([np.sqrt(comb(n + space.offset, space.offset) * cell ** n) for n in range(space.nmax + 1)])


def weight_vector(space: Space) -> np.ndarray:
    return np.concatenate([np.full(space.sector_size(n), w) for n, w in enumerate(sector_weights(space))])


def family_hamiltonian(model: LatticeModel, fermions: int, other_bosons: int, window=None) -> SparseOperator:
    """H_j^P on the field of one family.

    The family owns ``fermions`` x-particles; ``other_bosons`` bosons belong to other
    families and are held fixed. Absorption only reaches the family's own bosons,
    emission deposits into the family, and the sqrt(N) factors count all bosons.
    """
    space = Space(model, fermions, model.nmax - other_bosons, other_bosons,
                  None if window is None else tuple(sorted(window)))
    return full_hamiltonian(space)
