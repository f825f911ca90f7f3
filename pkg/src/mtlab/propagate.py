"""Time evolution engines and single-time diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps

from .fock import FockState, Space, full_space, restrict, mass_outside, support3
from .geometry import grow
from .model import LatticeModel
from .operators import (SparseOperator, dirac_one_body, free_bosons, free_fermions, full_hamiltonian,
                        interaction, weight_vector)

DENSE_LIMIT = 1200


class KrylovError(RuntimeError):
    pass


def krylov_expmv(matvec, v: np.ndarray, t: float, tol: float = 1e-10, m: int = 30,
                 max_steps: int = 100000) -> tuple[np.ndarray, float]:
    """exp(-i t H) v by Arnoldi with adaptive sub-stepping.

    Returns the result and the accumulated error estimate. The local error estimate per
    step is beta * h_{m+1,m} * |last entry of exp(-i tau H_m) e_1|, kept below tol * tau / |t|.
    """
    w = np.array(v, dtype=complex)
    if t == 0:
        return w, 0.0
    total = abs(t)
    sgn = np.sign(t)
    done, err_sum = 0.0, 0.0
    tau = min(total, 1.0)
    n = w.shape[0]
    m = min(m, n)
    steps = 0
    while done < total:
        steps += 1
        if steps > max_steps:
            raise KrylovError(f"Krylov propagation did not converge (reached t={done:.3g}, error {err_sum:.3g})")
        beta = np.linalg.norm(w)
        if beta == 0:
            return w, err_sum
        V = np.zeros((m + 1, n), dtype=complex)
        Hm = np.zeros((m + 1, m), dtype=complex)
        V[0] = w / beta
        k_used = m
        breakdown = False
        for j in range(m):
            u = matvec(V[j])
            for i in range(j + 1):  # modified Gram-Schmidt, twice for stability
                c = np.vdot(V[i], u)
                Hm[i, j] += c
                u -= c * V[i]
            for i in range(j + 1):
                c = np.vdot(V[i], u)
                Hm[i, j] += c
                u -= c * V[i]
            h = np.linalg.norm(u)
            Hm[j + 1, j] = h
            if h < 1e-14 * max(1.0, abs(Hm[j, j])):
                k_used = j + 1
                breakdown = True
                break
            V[j + 1] = u / h
        tau = min(tau, total - done)
        while True:
            small = -1j * sgn * tau * Hm[:k_used, :k_used]
            E = sla.expm(small)
            y = E[:, 0]
            err = 0.0 if breakdown else beta * abs(Hm[k_used, k_used - 1]) * abs(y[k_used - 1]) * tau
            if err <= tol * tau / total or tau < 1e-12:
                break
            tau *= 0.5
        w = beta * (V[:k_used].T @ y)
        done += tau
        err_sum += err
        if err < 0.1 * tol * tau / total:
            tau *= 2.0
    return w, err_sum


class Propagator:
    """U(t) = exp(-i H t) for the model's operators.

    Operators here are Hermitian in the weighted inner product, and reduced operators
    (bosons frozen out) are not Hermitian at all; both are similar to a plain Hermitian
    matrix through the diagonal sector weights, so propagation runs on that form.
    """

    def __init__(self, op: SparseOperator, method: str = "auto", tol: float = 1e-10, krylov_dim: int = 30):
        self.space = op.space
        self.literal = op
        self.weights = weight_vector(op.space)
        if np.all(self.weights == 1.0):
            self.weights = None
        else:
            w = sps.diags(self.weights)
            op = SparseOperator(op.space, (w @ op.matrix @ sps.diags(1.0 / self.weights)).tocsr(), True)
        self.op = op
        if method == "auto":
            method = "exact" if op.space.dim <= DENSE_LIMIT else "krylov"
        self.method = method
        self.tol = tol
        self.krylov_dim = krylov_dim
        self.last_error = 0.0
        self._eig = None

    def _eigh(self):
        if self._eig is None:
            self._eig = _dense_eigh(self.op)
        return self._eig

    def apply_vector(self, vec: np.ndarray, t: float) -> np.ndarray:
        vec = np.asarray(vec, dtype=complex)
        if t == 0:
            return vec.copy()
        if self.weights is not None:
            vec = (vec.T * self.weights).T
        out = self.apply_hermitian(vec, t)
        if self.weights is not None:
            out = (out.T / self.weights).T
        return out

    def apply_hermitian(self, vec: np.ndarray, t: float) -> np.ndarray:
        """exp(-i H_h t) vec for the plain-Hermitian similar form H_h = S H S^-1."""
        vec = np.asarray(vec, dtype=complex)
        if t == 0:
            return vec.copy()
        if self.method == "exact":
            E, V = self._eigh()
            out = V @ (np.exp(-1j * E * t)[:, None] * (V.conj().T @ vec.reshape(len(E), -1)))
            out = out.reshape(vec.shape)
        elif self.method == "krylov":
            mat = self.op.matrix
            if vec.ndim == 1:
                out, self.last_error = krylov_expmv(mat.dot, vec, t, self.tol, self.krylov_dim)
            else:
                cols = [krylov_expmv(mat.dot, vec[:, c], t, self.tol, self.krylov_dim)[0] for c in range(vec.shape[1])]
                out = np.stack(cols, axis=1)
        elif self.method == "expm_multiply":
            from scipy.sparse.linalg import expm_multiply

            out = expm_multiply(-1j * t * self.op.matrix, vec)
        else:
            raise ValueError(f"unknown propagation method {self.method!r}")
        return out

    def apply(self, state: FockState, t: float) -> FockState:
        return FockState.from_vector(state.space, self.apply_vector(state.vector(), t), state.symmetric)


_EIG_CACHE: dict = {}


def _dense_eigh(op: SparseOperator):
    key = id(op)
    hit = _EIG_CACHE.get(key)
    if hit is not None and hit[0] is op:
        return hit[1]
    dense = op.matrix.toarray()
    E, V = np.linalg.eigh(dense)
    if len(_EIG_CACHE) > 8:
        _EIG_CACHE.clear()
    _EIG_CACHE[key] = (op, (E, V))
    return E, V


def propagator_for(space: Space, method: str = "auto", tol: float = 1e-10) -> Propagator:
    return _cached_propagator(space.model, space.fermions, space.nmax, space.offset, space.sites, method, tol)


@lru_cache(maxsize=32)
def _cached_propagator(model, fermions, nmax, offset, sites, method, tol):
    return Propagator(full_hamiltonian(Space(model, fermions, nmax, offset, sites)), method, tol)


def evolve(state: FockState, t: float, method: str = "auto", tol: float = 1e-10) -> FockState:
    return propagator_for(state.space, method, tol).apply(state, t)


# ---------------------------------------------------------------------------
# Trotter splitting


def _apply_one_body(state: FockState, u: np.ndarray, slots_of) -> FockState:
    out = []
    for n, arr in enumerate(state.sectors):
        a = arr
        for ax in slots_of(n):
            a = np.moveaxis(np.tensordot(u, a, axes=([1], [ax])), 0, ax)
        out.append(a)
    return FockState(state.space, out, state.symmetric)


def trotter_evolve(state: FockState, t: float, steps: int, method: str = "auto") -> FockState:
    """First-order product: ((prod_k e^{-i H^int_k tau}) e^{-i dGamma(H_y) tau} e^{-i H^free_Mx tau})^n."""
    if steps < 1:
        raise ValueError("need at least one Trotter step")
    sp = state.space
    model = sp.model
    tau = t / steps
    ux = sla.expm(-1j * tau * dirac_one_body(model, model.mx, sp.sites).toarray())
    uy = sla.expm(-1j * tau * dirac_one_body(model, model.my, sp.sites).toarray())
    ints = [Propagator(interaction(sp, k), method) for k in range(sp.fermions)]
    m = sp.fermions
    cur = state
    for _ in range(steps):
        cur = _apply_one_body(cur, ux, lambda n: range(m))
        cur = _apply_one_body(cur, uy, lambda n: range(m, m + n))
        for P in reversed(ints):
            cur = P.apply(cur, tau)
    return cur


def interaction_only_evolve(state: FockState, t: float, slot: int | None = None) -> FockState:
    sp = state.space
    slots = range(sp.fermions) if slot is None else [slot]
    cur = state
    for k in slots:
        cur = Propagator(interaction(sp, k)).apply(cur, t)
    return cur


# ---------------------------------------------------------------------------
# Green function


@dataclass
class GreenTable:
    """G_{r r' s}(t, y): free boson evolution of g_{r r' .} phi(.) centred at the origin site."""

    model: LatticeModel
    times: list[float]
    values: np.ndarray  # (T, s, s, n_sites, s)
    _cache: dict = field(default_factory=dict, repr=False)

    def initial(self) -> np.ndarray:
        return green_initial(self.model)

    def at(self, t: float) -> np.ndarray:
        """Exact propagation to the requested time; never interpolated."""
        for i, ti in enumerate(self.times):
            if ti == t:
                return self.values[i]
        if t not in self._cache:
            self._cache[t] = _green_slice(self.model, t)
        return self._cache[t]

    def kernel(self, t: float) -> np.ndarray:
        """Kernel K[r, r', y, x, s] = G_{r r' s}(t, y - x) on the full lattice."""
        G = self.at(t)
        model = self.model
        n = model.n_sites
        out = np.zeros(G.shape[:2] + (n, n) + G.shape[-1:], dtype=complex)
        for x in range(n):
            cx = np.array(model.site_coords(x))
            for y in range(n):
                disp = model.displacement(x, y)
                out[:, :, y, x, :] = G[:, :, model.site_index(disp), :]
        return out


def green_initial(model: LatticeModel) -> np.ndarray:
    s = model.spin
    phi0 = model.phi[:, 0]  # phi(y - origin)
    return model.coupling[:, :, None, :] * phi0[None, None, :, None]


@lru_cache(maxsize=16)
def _boson_eigh(model: LatticeModel):
    h = dirac_one_body(model, model.my).toarray()
    return np.linalg.eigh(h)


def _green_slice(model: LatticeModel, t: float) -> np.ndarray:
    G0 = green_initial(model)
    if t == 0:
        return G0.copy()
    E, V = _boson_eigh(model)
    U = V @ (np.exp(-1j * E * t)[:, None] * V.conj().T)
    s = model.spin
    flat = G0.reshape(s, s, -1)  # (r, r', y*s)
    out = np.einsum("ab,rqb->rqa", U, flat)
    return out.reshape(G0.shape)


def green_function(model: LatticeModel, t_grid) -> GreenTable:
    times = [float(t) for t in t_grid]
    vals = np.stack([_green_slice(model, t) for t in times])
    return GreenTable(model, times, vals)


_FD8 = (4 / 5, -1 / 5, 4 / 105, -1 / 280)


def green_dirac_residual(table: GreenTable, t: float, h: float = 0.02) -> float:
    """max |i dG/dt - H_y G| using 8th-order central differences of exactly propagated slices."""
    model = table.model
    s = model.spin
    dG = np.zeros_like(table.at(t))
    for k, c in enumerate(_FD8, start=1):
        dG += c * (_green_slice(model, t + k * h) - _green_slice(model, t - k * h))
    dG /= h
    hy = dirac_one_body(model, model.my).toarray()
    HG = np.einsum("ab,rqb->rqa", hy, table.at(t).reshape(s, s, -1)).reshape(dG.shape)
    return float(np.max(np.abs(1j * dG - HG)))


def green_mass_outside(table: GreenTable, t: float, radius: float) -> float:
    """Sum over (r, r') of the L2 mass of G(t, .) at sites farther than radius from the origin."""
    model = table.model
    dist = model.distance_matrix()[0]
    G = table.at(t)
    far = dist > radius + 1e-12
    return float(np.sum(np.abs(G[:, :, far, :]) ** 2) * model.cell)


# ---------------------------------------------------------------------------
# local evolution


def local_evolve(state: FockState, region, t: float, margin: int = 2, window=None) -> FockState:
    """Evolve on a window around Gr(region, |t| + delta) and restrict the result to the region."""
    model = state.model
    region = sorted(set(int(s) for s in region))
    need = grow(region, abs(t) + model.delta + margin * model.spacing, model)
    if window is None:
        window = need
    window = sorted(set(window))
    if not set(need) <= set(window):
        raise ValueError("window too small for requested t")
    if len(window) == model.n_sites and state.space.sites is None:
        out = evolve(state, t)
    else:
        sub = restrict(state, window)
        out = propagator_for(sub.space).apply(sub, t)
    return restrict(out, region)


# ---------------------------------------------------------------------------
# support growth


def grown_supports(state0: FockState, t: float, margin: int = 2):
    model = state0.model
    sx = support3(state0, "x")
    sy = support3(state0, "y")
    pad = margin * model.spacing
    gx = grow(sx, abs(t) + pad, model)
    gy = grow(sy, abs(t) + pad, model) | grow(sx, abs(t) + model.delta + pad, model)
    return gx, gy


def support_mass_outside(state0: FockState, state_t: FockState, t: float, margin: int = 2) -> float:
    gx, gy = grown_supports(state0, t, margin)
    return mass_outside(state_t, gx, gy)


# ---------------------------------------------------------------------------
# current balance


@dataclass
class CurrentReport:
    residual: list  # per-sector pointwise residual arrays over site configurations
    source: list  # per-sector interaction source densities
    d0j0: list
    sector_source_sums: np.ndarray
    boundary_flux: np.ndarray
    global_rate: float

    @property
    def max_residual(self) -> float:
        return max(float(np.max(np.abs(r))) if r.size else 0.0 for r in self.residual)

    @property
    def telescoping_total(self) -> float:
        return float(abs(np.sum(self.sector_source_sums)))


def _spin_contract(psi: np.ndarray, phi: np.ndarray, mat: np.ndarray | None, slot: int, spin: int) -> np.ndarray:
    """Per site-configuration sum over spins of conj(psi) * (mat on slot) phi."""
    rank = psi.ndim
    shape = []
    for _ in range(rank):
        shape += [psi.shape[0] // spin, spin]
    a = psi.reshape(shape) if rank else psi
    b = phi.reshape(shape) if rank else phi
    if mat is not None:
        b = np.moveaxis(np.tensordot(mat, b, axes=([1], [2 * slot + 1])), 0, 2 * slot + 1)
    prod = np.conj(a) * b
    return prod.sum(axis=tuple(2 * i + 1 for i in range(rank))) if rank else prod


def _central_diff_axis(arr: np.ndarray, model: LatticeModel, slot: int, axis: int) -> np.ndarray:
    """Central difference along spatial axis `axis` of the slot's site coordinate."""
    rank = arr.ndim
    L = model.sites
    shp = []
    for _ in range(rank):
        shp += [L] * model.dim
    a = arr.reshape(shp)
    ax = slot * model.dim + axis
    return ((np.roll(a, -1, axis=ax) - np.roll(a, 1, axis=ax)) / (2 * model.spacing)).reshape(arr.shape)


def current_divergence_check(state: FockState, H: SparseOperator | None = None) -> CurrentReport:
    """Pointwise balance d0 j0 + div j - source over site configurations, sector by sector.

    d0 j0 uses the exact generator: d|Psi|^2/dt = 2 Im(conj(Psi) H Psi).
    """
    sp = state.space
    if sp.sites is not None:
        raise ValueError("current check needs the full periodic lattice")
    model = sp.model
    spin = model.spin
    m = sp.fermions
    H = H or full_hamiltonian(sp)
    HPsi = H.apply(state)
    ints = [interaction(sp, k).apply(state) for k in range(m)]
    alphas = model.alphas()
    residual, source, d0 = [], [], []
    sums = []
    for n, psi in enumerate(state.sectors):
        d0j0 = 2 * np.imag(_spin_contract(psi, HPsi.sectors[n], None, 0, spin))
        src = sum(2 * np.imag(_spin_contract(psi, I.sectors[n], None, 0, spin)) for I in ints) if m else 0 * d0j0
        div = np.zeros_like(d0j0)
        for slot in range(psi.ndim):
            for ax, al in enumerate(alphas):
                j = np.real(_spin_contract(psi, psi, al, slot, spin))
                div += _central_diff_axis(j, model, slot, ax)
        residual.append(d0j0 + div - src)
        source.append(src)
        d0.append(d0j0)
        sums.append(float(np.sum(src)) * sp.weight ** (m + n))
    # boundary flux between sectors n and n+1: 2 Im <Psi_n, A Psi_{n+1}>
    flux = []
    for n in range(sp.nmax):
        tot = 0.0
        for k in range(m):
            I = interaction(sp, k)
            only = FockState.zeros(sp)
            only.sectors[n + 1] = state.sectors[n + 1]
            tot += 2 * np.imag(np.vdot(state.sectors[n], I.apply(only).sectors[n])) * sp.weight ** (m + n)
        flux.append(tot)
    rate = 2 * np.imag(state.inner(HPsi))
    return CurrentReport(residual, source, d0, np.array(sums), np.array(flux), float(rate))


def norm_rate_fd(state: FockState, h: float = 1e-3) -> float:
    """d/dt ||Psi_t||^2 at t=0 by a central difference along the propagated flow."""
    from .fock import norm

    P = propagator_for(state.space)
    return (norm(P.apply(state, h)) ** 2 - norm(P.apply(state, -h)) ** 2) / (2 * h)
