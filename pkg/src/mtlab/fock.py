"""Sector-wise Fock states over labelled lattice-spin coordinates.

Sector N of a state with M fermions is a dense complex array of rank M + N whose
axes are single-particle indices ``site * spin + spin_component``. Fermion axes come
first in label order, boson axes after. Storage is over labelled coordinates; the
physical (anti)symmetric subspace is reached by projection.
"""

from __future__ import annotations

import csv
import itertools
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import LatticeModel


@dataclass(frozen=True, eq=False)
class Space:
    """Truncated state space: fermion count, boson truncation, frozen-boson offset, site window.

    ``offset`` counts bosons frozen out of the state during staged evaluation; the
    creation/annihilation prefactors use the total boson number N + offset.
    """

    model: LatticeModel
    fermions: int
    nmax: int
    offset: int = 0
    sites: tuple[int, ...] | None = None

    @cached_property
    def site_list(self) -> np.ndarray:
        if self.sites is None:
            return np.arange(self.model.n_sites)
        return np.asarray(self.sites, dtype=int)

    @property
    def n1(self) -> int:
        return len(self.site_list) * self.model.spin

    @property
    def weight(self) -> float:
        return self.model.cell

    def sector_shape(self, n: int) -> tuple[int, ...]:
        return (self.n1,) * (self.fermions + n)

    def sector_size(self, n: int) -> int:
        return self.n1 ** (self.fermions + n)

    @cached_property
    def offsets(self) -> np.ndarray:
        sizes = [self.sector_size(n) for n in range(self.nmax + 1)]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def index(self, site: int, spin: int) -> int:
        """Single-particle axis index of a global lattice site."""
        if self.sites is None:
            return site * self.model.spin + spin
        pos = np.nonzero(self.site_list == site)[0]
        if pos.size == 0:
            raise IndexError(f"site {site} outside window")
        return int(pos[0]) * self.model.spin + spin

    def site_of(self, idx: int) -> int:
        return int(self.site_list[idx // self.model.spin])

    def with_(self, **changes) -> "Space":
        kw = dict(model=self.model, fermions=self.fermions, nmax=self.nmax, offset=self.offset, sites=self.sites)
        kw.update(changes)
        return Space(**kw)

    def key(self) -> tuple:
        return (id(self.model), self.fermions, self.nmax, self.offset, self.sites)


def full_space(model: LatticeModel) -> Space:
    return Space(model, model.fermions, model.nmax)


@dataclass
class FockState:
    space: Space
    sectors: list[np.ndarray]
    symmetric: bool = field(default=False)

    @classmethod
    def zeros(cls, space: Space) -> "FockState":
        return cls(space, [np.zeros(space.sector_shape(n), dtype=complex) for n in range(space.nmax + 1)], True)

    @classmethod
    def from_vector(cls, space: Space, vec: np.ndarray, symmetric: bool = False) -> "FockState":
        vec = np.asarray(vec, dtype=complex)
        if vec.shape[0] != space.dim:
            raise ValueError(f"vector length {vec.shape[0]} does not match space dimension {space.dim}")
        o = space.offsets
        secs = [vec[o[n]:o[n + 1]].reshape(space.sector_shape(n)).copy() for n in range(space.nmax + 1)]
        return cls(space, secs, symmetric)

    @property
    def model(self) -> LatticeModel:
        return self.space.model

    def vector(self) -> np.ndarray:
        return np.concatenate([s.ravel() for s in self.sectors])

    def copy(self) -> "FockState":
        return FockState(self.space, [s.copy() for s in self.sectors], self.symmetric)

    def __add__(self, other: "FockState") -> "FockState":
        return FockState(self.space, [a + b for a, b in zip(self.sectors, other.sectors)], self.symmetric and other.symmetric)

    def __sub__(self, other: "FockState") -> "FockState":
        return FockState(self.space, [a - b for a, b in zip(self.sectors, other.sectors)], self.symmetric and other.symmetric)

    def __mul__(self, c: complex) -> "FockState":
        return FockState(self.space, [c * a for a in self.sectors], self.symmetric)

    __rmul__ = __mul__

    def sector_norm2(self, n: int) -> float:
        w = self.space.weight ** (self.space.fermions + n)
        return float(np.sum(np.abs(self.sectors[n]) ** 2) * w)

    def inner(self, other: "FockState") -> complex:
        tot = 0j
        for n, (a, b) in enumerate(zip(self.sectors, other.sectors)):
            tot += np.vdot(a, b) * self.space.weight ** (self.space.fermions + n)
        return complex(tot)


# ---------------------------------------------------------------------------
# norms


def number_weighted_norm(state: FockState, m: int) -> float:
    return math.sqrt(sum((n ** m if m else 1) * state.sector_norm2(n) for n in range(len(state.sectors))))


def norm(state: FockState) -> float:
    return number_weighted_norm(state, 0)


# ---------------------------------------------------------------------------
# symmetry projection


def _perm_sign(p: Sequence[int]) -> int:
    sign, seen = 1, [False] * len(p)
    for i in range(len(p)):
        if seen[i]:
            continue
        j, length = i, 0
        while not seen[j]:
            seen[j] = True
            j = p[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def project_sector(arr: np.ndarray, fermions: int) -> np.ndarray:
    rank = arr.ndim
    nb = rank - fermions
    out = np.zeros_like(arr)
    fperms = list(itertools.permutations(range(fermions)))
    bperms = list(itertools.permutations(range(nb)))
    for fp in fperms:
        sgn = _perm_sign(fp)
        for bp in bperms:
            axes = list(fp) + [fermions + b for b in bp]
            out += sgn * np.transpose(arr, axes)
    return out / (len(fperms) * len(bperms))


def symmetrize(raw: FockState) -> FockState:
    for n, s in enumerate(raw.sectors):
        if s.shape != raw.space.sector_shape(n):
            raise ValueError(f"sector {n} has shape {s.shape}, expected {raw.space.sector_shape(n)}")
    secs = [project_sector(s, raw.space.fermions) for s in raw.sectors]
    return FockState(raw.space, secs, True)


# ---------------------------------------------------------------------------
# supports


def support3(state: FockState, species: str, eps: float = 1e-12) -> set[int]:
    """Lattice sites carrying a particle of the given species with |Psi| > eps somewhere."""
    spin = state.model.spin
    m = state.space.fermions
    found: set[int] = set()
    for n, arr in enumerate(state.sectors):
        mask = np.abs(arr) > eps
        if not mask.any():
            continue
        if species == "x":
            axes = range(m)
        elif species == "y":
            axes = range(m, m + n)
        else:
            raise ValueError("species must be 'x' or 'y'")
        for ax in axes:
            other = tuple(i for i in range(arr.ndim) if i != ax)
            hit = mask.any(axis=other) if other else mask
            for idx in np.nonzero(hit)[0]:
                found.add(state.space.site_of(int(idx)))
    return found


def mass_outside(state: FockState, allowed_x: set[int] | None, allowed_y: set[int] | None) -> float:
    """Probability weight of configurations with some x outside allowed_x or some y outside allowed_y."""
    spin = state.model.spin
    m = state.space.fermions
    sites = state.space.site_list
    tot = 0.0
    for n, arr in enumerate(state.sectors):
        inside = np.ones(arr.shape, dtype=bool)
        for ax in range(arr.ndim):
            allowed = allowed_x if ax < m else allowed_y
            if allowed is None:
                continue
            ok = np.repeat(np.isin(sites, list(allowed)), spin)
            shape = [1] * arr.ndim
            shape[ax] = -1
            inside &= ok.reshape(shape)
        tot += float(np.sum(np.abs(arr[~inside]) ** 2)) * state.space.weight ** (m + n)
    return tot


# ---------------------------------------------------------------------------
# partial evaluation


@dataclass(frozen=True)
class Frozen:
    """Coordinate to freeze. For fermions ``slot`` is the fermion axis (label order)."""

    species: str
    site: int
    spin: int
    slot: int | None = None


def partial_evaluate(state: FockState, freeze: Iterable[Frozen]) -> FockState:
    """Index the frozen coordinates; sector N of the result reads sector N + #frozen bosons.

    Frozen fermion axes are taken by axis identity, so the surviving fermions keep their
    label order. For antisymmetric input this coincides with moving each frozen label to
    the rightmost slot with a (-1) per adjacent transposition and indexing there.
    """
    freeze = list(freeze)
    sp = state.space
    fx = [f for f in freeze if f.species == "x"]
    fy = [f for f in freeze if f.species == "y"]
    if len(fx) > sp.fermions:
        raise ValueError("more frozen fermions than present")
    slots = [f.slot for f in fx]
    if any(s is None for s in slots) or len(set(slots)) != len(slots):
        raise ValueError("frozen fermions need distinct slots")
    if any(not 0 <= s < sp.fermions for s in slots):
        raise ValueError("fermion slot out of range")
    k = len(fy)
    if k > sp.nmax:
        raise ValueError("more frozen bosons than the truncation allows")
    fidx = {f.slot: sp.index(f.site, f.spin) for f in fx}
    bidx = [sp.index(f.site, f.spin) for f in fy]
    new_space = sp.with_(fermions=sp.fermions - len(fx), nmax=sp.nmax - k, offset=sp.offset + k)
    secs = []
    for n in range(new_space.nmax + 1):
        arr = state.sectors[n + k]
        m = sp.fermions
        index: list = [slice(None)] * arr.ndim
        for s, i in fidx.items():
            index[s] = i
        for j, i in enumerate(bidx):
            index[m + n + j] = i  # last boson slots
        secs.append(np.array(arr[tuple(index)], dtype=complex))
    return FockState(new_space, secs, state.symmetric)


def amplitude(state: FockState, xs: Sequence[tuple[int, int]], ys: Sequence[tuple[int, int]]) -> complex:
    """Psi at fermion coordinates xs and boson coordinates ys, each (site, spin)."""
    sp = state.space
    if len(xs) != sp.fermions:
        raise ValueError("need one coordinate per fermion")
    arr = state.sectors[len(ys)]
    idx = tuple(sp.index(s, r) for s, r in xs) + tuple(sp.index(s, r) for s, r in ys)
    return complex(arr[idx])


# ---------------------------------------------------------------------------
# windows


def restrict(state: FockState, sites: Sequence[int]) -> FockState:
    """Restrict to configurations with every particle inside ``sites`` (a window space)."""
    sites = tuple(sorted(int(s) for s in sites))
    spin = state.model.spin
    sub = np.array([state.space.index(s, r) for s in sites for r in range(spin)])
    new_space = state.space.with_(sites=sites)
    secs = [arr[np.ix_(*([sub] * arr.ndim))] if arr.ndim else arr.copy() for arr in state.sectors]
    return FockState(new_space, secs, state.symmetric)


def embed(state: FockState, space: Space) -> FockState:
    """Extend a window state by zero into a larger space."""
    spin = state.model.spin
    sub = np.array([space.index(s, r) for s in state.space.site_list for r in range(spin)])
    out = FockState.zeros(space)
    for n, arr in enumerate(state.sectors):
        out.sectors[n][np.ix_(*([sub] * arr.ndim))] = arr
    out.symmetric = state.symmetric
    return out


# ---------------------------------------------------------------------------
# state recipes


def orbital_packet(model: LatticeModel, center: int, radius: float, spinor: Sequence[complex], k: float = 0.0) -> np.ndarray:
    """Single-particle orbital with compact bump envelope of the given physical radius."""
    from .model import bump

    spin = model.spin
    out = np.zeros((model.n_sites, spin), dtype=complex)
    u = np.asarray(spinor, dtype=complex)
    u = u / np.linalg.norm(u)
    for y in range(model.n_sites):
        disp = model.displacement(center, y)
        r = model.spacing * np.sqrt(np.sum(disp ** 2)) / radius
        env = bump(np.array(r))
        if env > 0:
            out[y] = env * np.exp(1j * k * model.spacing * disp[0]) * u
    out /= np.sqrt(np.sum(np.abs(out) ** 2) * model.cell)
    return out.reshape(-1)


def localized_orbital(model: LatticeModel, site: int, spin: int) -> np.ndarray:
    out = np.zeros(model.n_single, dtype=complex)
    out[site * model.spin + spin] = 1.0 / math.sqrt(model.cell)
    return out


def product_state(space: Space, fermion_orbitals: Sequence[np.ndarray], boson_orbitals: Sequence[np.ndarray] = (),
                  symmetrized: bool = True) -> FockState:
    """(Anti)symmetrized product of orbitals, placed in sector len(boson_orbitals), unit norm."""
    if len(fermion_orbitals) != space.fermions:
        raise ValueError("need one orbital per fermion")
    n = len(boson_orbitals)
    arr = np.array(1.0 + 0j)
    for f in list(fermion_orbitals) + list(boson_orbitals):
        arr = np.multiply.outer(arr, np.asarray(f))
    st = FockState.zeros(space)
    st.sectors[n] = arr.reshape(space.sector_shape(n))
    st.symmetric = False
    if symmetrized:
        st = symmetrize(st)
    nrm = norm(st)
    if nrm == 0:
        raise ValueError("product state vanishes after antisymmetrization")
    return st * (1.0 / nrm)


def random_state(space: Space, rng: np.random.Generator, symmetrized: bool = True) -> FockState:
    secs = [rng.normal(size=space.sector_shape(n)) + 1j * rng.normal(size=space.sector_shape(n))
            for n in range(space.nmax + 1)]
    st = FockState(space, secs, False)
    if symmetrized:
        st = symmetrize(st)
    return st * (1.0 / norm(st))


# ---------------------------------------------------------------------------
# export

_MAGIC = b"MTFOCK01"


def export_snapshot(state: FockState, path: str | Path) -> None:
    """Binary archive: magic, sector count, then per sector rank, shape and little-endian complex pairs (C order)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", len(state.sectors), state.space.fermions))
        for arr in state.sectors:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<c16").tobytes(order="C"))


def load_snapshot(path: str | Path) -> tuple[int, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a Fock snapshot")
    pos = 8
    count, fermions = struct.unpack_from("<II", data, pos)
    pos += 8
    secs = []
    for _ in range(count):
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        size = int(np.prod(shape)) if rank else 1
        secs.append(np.frombuffer(data, dtype="<c16", count=size, offset=pos).reshape(shape).copy())
        pos += 16 * size
    return fermions, secs


def export_marginals_csv(state: FockState, path: str | Path) -> None:
    """One row per (species, site): summed |Psi|^2 weight of configurations with that species at that site."""
    sp = state.space
    spin = state.model.spin
    m = sp.fermions
    rows = {}
    for n, arr in enumerate(state.sectors):
        dens = np.abs(arr) ** 2 * sp.weight ** (m + n)
        for ax in range(arr.ndim):
            other = tuple(i for i in range(arr.ndim) if i != ax)
            marg = dens.sum(axis=other) if other else dens
            marg = marg.reshape(-1, spin).sum(axis=1)
            species = "x" if ax < m else "y"
            for i, v in enumerate(marg):
                key = (species, int(sp.site_list[i]))
                rows[key] = rows.get(key, 0.0) + float(v)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["species", "site", "weight"])
        for (species, site), v in sorted(rows.items()):
            w.writerow([species, site, repr(v)])
