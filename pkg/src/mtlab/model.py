"""Lattice model: geometry, Dirac matrices, cutoff profile and coupling tensor."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
from typing import Any, Mapping

import numpy as np

SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


def dirac_matrices(dim: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Return (alphas, beta). d=1 uses Pauli matrices, d=3 the standard Dirac representation."""
    if dim == 1:
        return [SIGMA1.copy()], SIGMA3.copy()
    if dim == 3:
        zero = np.zeros((2, 2), dtype=complex)
        alphas = [np.block([[zero, s], [s, zero]]) for s in (SIGMA1, SIGMA2, SIGMA3)]
        beta = np.block([[I2, zero], [zero, -I2]])
        return alphas, beta
    raise ValueError("spatial dimension must be 1 or 3")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CutoffFunction:
    """Cutoff samples on displacement vectors, keyed by lattice offset."""

    offsets: np.ndarray  # (n, d) integer displacements with |offset|*a < delta
    values: np.ndarray  # (n,) real, normalized so sum(values) * a^d = 1
    radius: float
    norm_constant: float
    l2_norm: float

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(c) for c in o): float(v) for o, v in zip(self.offsets, self.values)}


def bump(r: np.ndarray) -> np.ndarray:
    """exp(-1/(1-r^2)) for r<1, exactly zero otherwise."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True, eq=False)
class LatticeModel:
    dim: int = 1
    sites: int = 8
    spacing: float = 1.0
    fermions: int = 1
    nmax: int = 2
    mx: float = 1.0
    my: float = 1.0
    delta: float = 1.5
    coupling: np.ndarray = field(default=None, repr=False)  # (s, s, s) complex
    profile: str = "bump"
    max_time: float = 0.0

    # ---- derived quantities -------------------------------------------------
    @property
    def spin(self) -> int:
        return 2 if self.dim == 1 else 4

    @property
    def n_sites(self) -> int:
        return self.sites ** self.dim

    @property
    def n_single(self) -> int:
        return self.n_sites * self.spin

    @property
    def cell(self) -> float:
        return self.spacing ** self.dim

    def alphas(self) -> list[np.ndarray]:
        return dirac_matrices(self.dim)[0]

    def beta(self) -> np.ndarray:
        return dirac_matrices(self.dim)[1]

    # ---- lattice geometry ---------------------------------------------------
    def site_coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, (self.sites,) * self.dim))

    def site_index(self, coords) -> int:
        coords = tuple(int(c) % self.sites for c in np.atleast_1d(coords))
        return int(np.ravel_multi_index(coords, (self.sites,) * self.dim))

    def all_coords(self) -> np.ndarray:
        grids = np.indices((self.sites,) * self.dim).reshape(self.dim, -1).T
        return grids

    def displacement(self, a: int, b: int) -> np.ndarray:
        """Minimum-image integer displacement b - a."""
        ca = np.array(self.site_coords(a))
        cb = np.array(self.site_coords(b))
        diff = (cb - ca) % self.sites
        diff = np.where(diff > self.sites // 2, diff - self.sites, diff)
        return diff

    def distance2_exact(self, a: int, b: int) -> Fraction:
        """Squared periodic distance as an exact rational."""
        n2 = int(np.sum(self.displacement(a, b) ** 2))
        return Fraction(self.spacing) ** 2 * n2

    def distance(self, a: int, b: int) -> float:
        return float(np.sqrt(float(self.distance2_exact(a, b))))

    def distance_matrix(self) -> np.ndarray:
        c = self.all_coords()
        diff = np.abs(c[:, None, :] - c[None, :, :])
        diff = np.minimum(diff, self.sites - diff)
        return self.spacing * np.sqrt(np.sum(diff ** 2, axis=-1))

    def neighbor(self, site: int, axis: int, step: int) -> int:
        c = list(self.site_coords(site))
        c[axis] = (c[axis] + step) % self.sites
        return self.site_index(c)

    @cached_property
    def cut(self) -> CutoffFunction:
        return sample_cutoff(self)

    def cutoff(self) -> CutoffFunction:
        return self.cut

    @cached_property
    def phi(self) -> np.ndarray:
        """phi(y - x) as a dense (n_sites, n_sites) real matrix indexed [y, x]."""
        out = np.zeros((self.n_sites, self.n_sites))
        table = self.cut.as_dict()
        for x in range(self.n_sites):
            cx = np.array(self.site_coords(x))
            for off, v in table.items():
                y = self.site_index(cx + np.array(off))
                out[y, x] += v
        out.setflags(write=False)
        return out

    def to_config(self) -> dict[str, Any]:
        g = np.asarray(self.coupling)
        return {
            "dim": self.dim,
            "sites": self.sites,
            "spacing": self.spacing,
            "masses": {"mx": self.mx, "my": self.my},
            "delta": self.delta,
            "nmax": self.nmax,
            "fermions": self.fermions,
            "coupling": {"tensor": [[[[float(v.real), float(v.imag)] for v in row] for row in mat] for mat in g]},
            "profile": self.profile,
            "max_time": self.max_time,
        }

    def replace(self, **changes) -> "LatticeModel":
        cfg = self.to_config()
        for key, value in changes.items():
            if key in ("mx", "my"):
                cfg["masses"][key] = value
            elif key == "g":
                cfg["coupling"] = value
            else:
                cfg[key] = value
        return build_model(cfg)


def _coupling_tensor(spec: Any, spin: int) -> np.ndarray:
    """Accept a list of g_s (diagonal form), a full tensor, or a dict wrapper."""
    if spec is None:
        spec = [0.1] * spin
    if isinstance(spec, Mapping):
        if "tensor" in spec:
            arr = np.asarray(spec["tensor"], dtype=float)
            if arr.shape != (spin, spin, spin, 2):
                raise ModelError(f"coupling tensor must have shape ({spin},{spin},{spin}) of [re, im] pairs")
            return arr[..., 0] + 1j * arr[..., 1]
        if "diagonal" in spec:
            spec = spec["diagonal"]
        else:
            raise ModelError("coupling mapping needs 'tensor' or 'diagonal'")
    arr = np.asarray(spec)
    if arr.dtype.kind in "fiu" and arr.ndim == 2 and arr.shape == (spin, 2):
        arr = arr[:, 0] + 1j * arr[:, 1]
    arr = arr.astype(complex)
    if arr.shape == (spin,):
        g = np.zeros((spin, spin, spin), dtype=complex)
        for r in range(spin):
            g[r, r, :] = arr
        return g
    if arr.shape == (spin, spin, spin):
        return arr
    raise ModelError(f"coupling must be {spin} values g_s or an {spin}x{spin}x{spin} tensor")


def build_model(config: Mapping[str, Any] | None = None, **overrides) -> LatticeModel:
    cfg = dict(config or {})
    cfg.update(overrides)
    dim = int(cfg.get("dim", 1))
    if dim not in (1, 3):
        raise ModelError("spatial dimension must be 1 or 3")
    masses = cfg.get("masses", {}) or {}
    mx = float(masses.get("mx", cfg.get("mx", 1.0)))
    my = float(masses.get("my", cfg.get("my", 1.0)))
    delta = float(cfg.get("delta", 1.5))
    sites = int(cfg.get("sites", 8))
    spacing = float(cfg.get("spacing", 1.0))
    fermions = int(cfg.get("fermions", 1))
    nmax = int(cfg.get("nmax", 2))
    profile = str(cfg.get("profile", "bump"))
    max_time = float(cfg.get("max_time", 0.0))
    if delta <= 0:
        raise ModelError("cutoff radius must be positive")
    if spacing <= 0:
        raise ModelError("lattice spacing must be positive")
    if mx <= 0 or my <= 0:
        raise ModelError("masses must be positive")
    if fermions < 1:
        raise ModelError("need at least one fermion")
    if nmax < 0:
        raise ModelError("boson truncation must be non-negative")
    if profile != "bump":
        raise ModelError(f"unknown cutoff profile {profile!r}")
    spin = 2 if dim == 1 else 4
    g = _coupling_tensor(cfg.get("coupling", cfg.get("g")), spin)
    model = LatticeModel(dim, sites, spacing, fermions, nmax, mx, my, delta, g, profile, max_time)
    # at least 3 sites strictly inside the ball in d=1 (1 + 2*d neighbours generally)
    cut = sample_cutoff(model)
    if len(cut.offsets) < 3:
        raise ModelError("lattice too coarse: fewer than 3 sites inside the cutoff ball")
    if sites * spacing <= 2 * delta:
        raise ModelError("lattice too small for the cutoff ball")
    if max_time and sites * spacing <= 2 * (delta + max_time):
        raise ModelError("periodic wraparound budget violated: L*a must exceed 2(delta + max_time)")
    return model


def sample_cutoff(model: LatticeModel) -> CutoffFunction:
    """Sample the bump at offsets strictly inside radius delta, normalized to unit lattice integral.

    Shape and normalization are a convention: any smooth compactly supported profile would do.
    """
    reach = int(np.ceil(model.delta / model.spacing))
    rng = np.arange(-reach, reach + 1)
    offs = np.array(np.meshgrid(*([rng] * model.dim), indexing="ij")).reshape(model.dim, -1).T
    delta2 = Fraction(model.delta) ** 2
    a2 = Fraction(model.spacing) ** 2
    keep = [o for o in offs if a2 * int(np.sum(o ** 2)) < delta2]
    offs = np.array(keep, dtype=int).reshape(-1, model.dim)
    r = model.spacing * np.sqrt(np.sum(offs ** 2, axis=1)) / model.delta
    raw = bump(r)
    const = 1.0 / (np.sum(raw) * model.cell) if raw.sum() > 0 else 0.0
    vals = const * raw
    l2 = float(np.sqrt(np.sum(vals ** 2) * model.cell))
    return CutoffFunction(offs, vals, model.delta, float(const), l2)
