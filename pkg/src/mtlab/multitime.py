"""Multi-time wave function on delta-spacelike configurations and its verification.

Phi is built by staged evolution: all particles evolve to the earliest family time,
that family is frozen by partial evaluation, the survivors evolve on to the next
family time with the reduced Hamiltonian (sqrt(N) factors still counting frozen
bosons), and so on.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .fock import FockState, Frozen, Space, full_space, number_weighted_norm, partial_evaluate, support3
from .geometry import (FamilyPartition, Label, Particle, SpacetimeConfiguration, finest_partition, grow,
                       is_delta_spacelike, is_hat_delta_spacelike)
from .model import LatticeModel
from .operators import dirac_one_body, full_hamiltonian, weight_vector
from .propagate import GreenTable, green_function, propagator_for


class DomainError(ValueError):
    pass


@dataclass
class MultiTimeQuery:
    target: SpacetimeConfiguration
    initial: FockState
    retained_family: int | None = None
    domain: str = "S"  # "S" or "hat"
    check_domain: bool = True


@dataclass
class StageRecord:
    time: float
    dt: float
    frozen: tuple
    space_dim: int
    method: str
    tolerance: float
    number_weighted_norm: float = float("nan")  # N^{1/2}-weighted norm after the evolution step


@dataclass
class MultiTimeAmplitude:
    value: complex | np.ndarray
    provenance: list[StageRecord] = field(default_factory=list)


# ---------------------------------------------------------------------------
# staging


def _stages(partition: FamilyPartition) -> list[tuple[float, tuple[Label, ...]]]:
    out: list[tuple[float, list]] = []
    for fam, t in zip(partition.families, partition.times):
        if out and out[-1][0] == t:
            out[-1][1].extend(fam)  # equal family times share one stage
        else:
            out.append((t, list(fam)))
    return [(t, tuple(labs)) for t, labs in out]


def _freeze(labels: Iterable[Label], coords: dict, active: list[int]) -> list[Frozen]:
    fr = []
    for lab in labels:
        site, spin = coords[lab]
        if lab[0] == "x":
            fr.append(Frozen("x", site, spin, slot=active.index(lab[1])))
        else:
            fr.append(Frozen("y", site, spin))
    return fr


def _coords(q: SpacetimeConfiguration) -> dict:
    return {lab: (q.particle(lab).site, q.particle(lab).spin) for lab in q.labels()}


def _check(q: SpacetimeConfiguration, model: LatticeModel, domain: str, check: bool) -> FamilyPartition:
    if len(q.xs) != model.fermions and check:
        raise DomainError("target must list every fermion")
    if len(q.ys) > model.nmax:
        raise DomainError("truncation overflow: target has more bosons than nmax")
    hat = domain == "hat"
    if check:
        ok = is_hat_delta_spacelike(q, model) if hat else is_delta_spacelike(q, model)
        if not ok:
            raise DomainError("target outside the domain")
    return finest_partition(q, model, hat=hat, check=False)


def _advance(state: FockState, dt: float, method: str, tol: float, log: list, t_new: float, frozen) -> FockState:
    P = propagator_for(state.space, method, tol)
    out = P.apply(state, dt)
    log.append(StageRecord(t_new, dt, tuple(frozen), state.space.dim, P.method, tol, number_weighted_norm(out, 1)))
    return out


def evaluate(query: MultiTimeQuery, method: str = "auto", tol: float = 1e-12) -> MultiTimeAmplitude:
    """Phi at the target; with ``retained_family`` the value is an array over that family's coordinates."""
    q = query.target
    model = query.initial.model
    part = _check(q, model, query.domain, query.check_domain)
    if query.retained_family is not None:
        fam = part.families[query.retained_family]
        configs = family_configs(q, fam, model)
        vals, log = evaluate_batch(query.initial, q, fam, configs, part, method, tol)
        nx = sum(1 for l in fam if l[0] == "x")
        ny = len(fam) - nx
        return MultiTimeAmplitude(np.asarray(vals).reshape((model.n_single,) * (nx + ny)), log)
    log: list[StageRecord] = []
    coords = _coords(q)
    state = query.initial
    active = list(range(len(q.xs)))
    t_cur = 0.0
    for t, labels in _stages(part):
        state = _advance(state, t - t_cur, method, tol, log, t, labels)
        t_cur = t
        state = partial_evaluate(state, _freeze(labels, coords, active))
        active = [k for k in active if ("x", k) not in labels]
    return MultiTimeAmplitude(complex(state.sectors[0]), log)


def phi(initial: FockState, q: SpacetimeConfiguration, check: bool = True, **kw) -> complex:
    return evaluate(MultiTimeQuery(q, initial, check_domain=check), **kw).value


def family_configs(q: SpacetimeConfiguration, fam: Sequence[Label], model: LatticeModel) -> list[dict]:
    """Every assignment of (site, spin) to the family's labels, in C order of single-particle indices."""
    spin = model.spin
    out = []
    import itertools

    for idx in itertools.product(range(model.n_single), repeat=len(fam)):
        cfg = {"x": {}, "y": []}
        for lab, i in zip(fam, idx):
            site, s = divmod(i, spin)
            if lab[0] == "x":
                cfg["x"][lab] = (site, s)
            else:
                cfg["y"].append((site, s))
        out.append(cfg)
    return out


def evaluate_batch(initial: FockState, q: SpacetimeConfiguration, fam: Sequence[Label], configs: Sequence[dict],
                   part: FamilyPartition | None = None, method: str = "auto", tol: float = 1e-12,
                   check: bool = False):
    """Phi with family ``fam`` replaced by each config; other families stay at the target.

    A config is {"x": {label: (site, spin)}, "y": [(site, spin), ...]}; the boson list may
    differ in length from the target's family, which is how neighbouring Fock sectors of
    the retained family are reached. Stages before the family's time are shared.
    """
    model = initial.model
    if part is None:
        part = _check(q, model, "S", check)
    fam = tuple(fam)
    fam_set = set(fam)
    stages = _stages(part)
    j_stage = next(i for i, (_, labs) in enumerate(stages) if fam_set <= set(labs))
    coords = _coords(q)
    log: list[StageRecord] = []
    state = initial
    active = list(range(len(q.xs)))
    t_cur = 0.0
    for t, labels in stages[:j_stage]:
        state = _advance(state, t - t_cur, method, tol, log, t, labels)
        t_cur = t
        state = partial_evaluate(state, _freeze(labels, coords, active))
        active = [k for k in active if ("x", k) not in labels]
    t_j, labels_j = stages[j_stage]
    state = _advance(state, t_j - t_cur, method, tol, log, t_j, labels_j)
    rest = [lab for lab in labels_j if lab not in fam_set]
    fam_x = [lab for lab in fam if lab[0] == "x"]
    later = stages[j_stage + 1:]
    active_after = [k for k in active if ("x", k) not in labels_j]

    # group configs by boson count so the later stages are shared column blocks
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(configs):
        groups.setdefault(len(c["y"]), []).append(i)
    values = np.zeros(len(configs), dtype=complex)
    # bosons of other families still unfrozen at this point; the state's nmax already excludes frozen ones
    n_other_y = sum(1 for lab in rest if lab[0] == "y") + sum(1 for _, labs in later for lab in labs if lab[0] == "y")
    if not later:
        for i, c in enumerate(configs):
            if n_other_y + len(c["y"]) > state.space.nmax:
                continue  # outside the truncated space
            frz = _freeze(rest, coords, active)
            frz += [Frozen("x", s, r, slot=active.index(lab[1])) for lab, (s, r) in c["x"].items()]
            frz += [Frozen("y", s, r) for s, r in c["y"]]
            values[i] = complex(partial_evaluate(state, frz).sectors[0])
        return values, log
    for ny, idxs in groups.items():
        if ny + n_other_y > state.space.nmax:
            continue  # outside the truncated space: Phi vanishes identically there
        reduced = []
        for i in idxs:
            c = configs[i]
            frz = _freeze(rest, coords, active)
            frz += [Frozen("x", s, r, slot=active.index(lab[1])) for lab, (s, r) in c["x"].items()]
            frz += [Frozen("y", s, r) for s, r in c["y"]]
            reduced.append(partial_evaluate(state, frz))
        space = reduced[0].space
        block = np.stack([r.vector() for r in reduced], axis=1)
        tc = t_j
        act = list(active_after)
        for t, labels in later:
            P = propagator_for(space, method, tol)
            block = P.apply_vector(block, t - tc)
            log.append(StageRecord(t, t - tc, tuple(labels), space.dim, P.method, tol))
            tc = t
            frz = _freeze(labels, coords, act)
            # freeze every column identically: go through FockState once per column
            new_cols = []
            for col in range(block.shape[1]):
                st = FockState.from_vector(space, block[:, col])
                new_cols.append(partial_evaluate(st, frz))
            space = new_cols[0].space
            block = np.stack([s.vector() for s in new_cols], axis=1)
            act = [k for k in act if ("x", k) not in labels]
        values[idxs] = block[0]
    return values, log


# ---------------------------------------------------------------------------
# two-family formula: W_1 (x) W_2 applied to Psi_t


def _row_functional(space: Space, index: int, s: float, method: str, tol: float) -> np.ndarray:
    """Vector r with r . f = [U(s) f]_index for the literal (possibly offset) reduced evolution."""
    # U = S^-1 exp(-i H_h s) S with H_h plain Hermitian, so U^T e = S conj(exp(+i H_h s) S^-1 e)
    w = weight_vector(space)
    P = propagator_for(space, method, tol)
    e = np.zeros(space.dim, dtype=complex)
    e[index] = 1.0 / w[index]
    u = P.apply_hermitian(e, -s)
    return w * np.conj(u)


def _family_index(space: Space, xs: Sequence[tuple[int, int]], ys: Sequence[tuple[int, int]]) -> int:
    n = len(ys)
    if n > space.nmax:
        return -1
    idx = [space.index(s, r) for s, r in list(xs) + list(ys)]
    flat = int(np.ravel_multi_index(idx, space.sector_shape(n))) if idx else 0
    return int(space.offsets[n]) + flat


def _window_axis(space: Space) -> np.ndarray:
    spin = space.model.spin
    return np.array([s * spin + r for s in space.site_list for r in range(spin)])


def two_family_formula(initial: FockState, q: SpacetimeConfiguration, t: float, method: str = "auto",
                       tol: float = 1e-12, check: bool = True, window_margin: int | None = None) -> complex:
    """Phi(q) for a two-stage target from Psi_t: family 2 evolved by t2 - t, then family 1 by t1 - t.

    Both evolutions act on one family's coordinates with the other family's bosons counted
    in the sqrt(N) factors. Evaluation uses row functionals, so no two-family array is formed.
    With ``window_margin`` each family evolves on the local window
    Gr(family sites, |t_j - t| + delta + margin) instead of the whole lattice.
    """
    model = initial.model
    part = _check(q, model, "S", check)
    stages = _stages(part)
    if len(stages) != 2:
        raise DomainError("two-family formula needs exactly two distinct times")
    (t1, fam1), (t2, fam2) = stages
    if not (min(t1, t2) <= t <= max(t1, t2)):
        raise ValueError("intermediate time must lie between the family times")
    coords = _coords(q)
    f1x = sorted(l[1] for l in fam1 if l[0] == "x")
    f2x = sorted(l[1] for l in fam2 if l[0] == "x")
    f1y = [coords[l] for l in fam1 if l[0] == "y"]
    f2y = [coords[l] for l in fam2 if l[0] == "y"]
    N2 = len(f2y)
    psi_t = propagator_for(initial.space, method, tol).apply(initial, t)
    nmax = model.nmax
    M1, M2 = len(f1x), len(f2x)
    win1 = win2 = None
    if window_margin is not None:
        pad = model.delta + window_margin * model.spacing
        win1 = tuple(sorted(grow({q.particle(l).site for l in fam1}, abs(t1 - t) + pad, model)))
        win2 = tuple(sorted(grow({q.particle(l).site for l in fam2}, abs(t2 - t) + pad, model)))
    space1 = Space(model, M1, nmax - N2, N2, win1)
    sel1 = _window_axis(space1)
    idx1 = _family_index(space1, [coords[("x", k)] for k in f1x], f1y)
    r1 = _row_functional(space1, idx1, t1 - t, method, tol)
    total = 0j
    for n1 in range(space1.nmax + 1):
        space2 = Space(model, M2, nmax - n1, n1, win2)
        sel2 = _window_axis(space2)
        idx2 = _family_index(space2, [coords[("x", k)] for k in f2x], f2y)
        if idx2 < 0:
            continue
        r2 = _row_functional(space2, idx2, t2 - t, method, tol)
        G = np.zeros(space1.sector_shape(n1), dtype=complex)
        for n2 in range(space2.nmax + 1):
            arr = psi_t.sectors[n1 + n2]
            # axes: family-1 fermions, family-1 bosons (first n1), family-2 fermions, family-2 bosons
            m = len(q.xs)
            order = f1x + list(range(m, m + n1)) + f2x + list(range(m + n1, m + n1 + n2))
            a = np.transpose(arr, order)
            for ax in range(a.ndim):
                a = np.take(a, sel1 if ax < M1 + n1 else sel2, axis=ax)
            r2blk = r2[space2.offsets[n2]:space2.offsets[n2 + 1]].reshape(space2.sector_shape(n2))
            G += np.tensordot(a, r2blk, axes=(list(range(M1 + n1, a.ndim)), list(range(M2 + n2))))
        r1blk = r1[space1.offsets[n1]:space1.offsets[n1 + 1]].reshape(space1.sector_shape(n1))
        total += np.sum(r1blk * G)
    return complex(total)


@dataclass
class PathReport:
    values: list[complex]
    times: list[float]
    staged: complex
    max_deviation: float


def path_independence_check(initial: FockState, q: SpacetimeConfiguration, intermediates: Sequence[float] | int = 5,
                            check: bool = True, tol: float = 1e-12) -> PathReport:
    part = _check(q, initial.model, "S", check)
    stages = _stages(part)
    t1, t2 = stages[0][0], stages[-1][0]
    if isinstance(intermediates, int):
        intermediates = list(np.linspace(t1, t2, intermediates))
    vals = [two_family_formula(initial, q, float(t), tol=tol, check=check) for t in intermediates]
    staged = phi(initial, q, check=check, tol=tol)
    allv = vals + [staged]
    dev = max(abs(a - b) for a in allv for b in allv)
    return PathReport(vals, list(intermediates), staged, float(dev))


# ---------------------------------------------------------------------------
# PDE residual with a retained family


@dataclass
class PDEReport:
    dts: list[float]
    residuals: list[float]
    floor: float
    ratios: list[float]
    corrected: list[float]  # || r(dt) - r(floor_dt) ||


def _family_space(q: SpacetimeConfiguration, fam: Sequence[Label], model: LatticeModel) -> Space:
    n_other = sum(1 for lab in q.labels() if lab[0] == "y" and lab not in set(fam))
    nx = sum(1 for lab in fam if lab[0] == "x")
    return Space(model, nx, model.nmax - n_other, n_other)


def _config_from_index(space: Space, flat: int, fam_x: Sequence[Label]) -> dict:
    n = int(np.searchsorted(space.offsets, flat, side="right") - 1)
    local = flat - int(space.offsets[n])
    idx = np.unravel_index(local, space.sector_shape(n)) if space.fermions + n else ()
    spin = space.model.spin
    pairs = [(space.site_of(int(i)), int(i) % spin) for i in idx]
    return {"x": {lab: pairs[k] for k, lab in enumerate(fam_x)}, "y": pairs[len(fam_x):]}


def family_residual_vector(initial: FockState, q: SpacetimeConfiguration, j: int, dt: float, tol: float = 1e-12,
                           part: FamilyPartition | None = None) -> np.ndarray:
    """i (Phi(t_j + dt) - Phi(t_j - dt)) / 2dt - H_j Phi over all spin components of family j."""
    model = initial.model
    if part is None:
        part = _check(q, model, "S", True)
    fam = part.families[j]
    t_j = part.times[j]
    fam_x = [lab for lab in fam if lab[0] == "x"]
    fam_y = [lab for lab in fam if lab[0] == "y"]
    space = _family_space(q, fam, model)
    H = full_hamiltonian(space).matrix  # literal family operator, sqrt(N) counts frozen bosons
    spin = model.spin
    import itertools

    rows = []
    row_cfgs = []
    for spins in itertools.product(range(spin), repeat=len(fam)):
        xs = [(q.particle(l).site, s) for l, s in zip(fam_x, spins[:len(fam_x)])]
        ys = [(q.particle(l).site, s) for l, s in zip(fam_y, spins[len(fam_x):])]
        rows.append(_family_index(space, xs, ys))
        row_cfgs.append({"x": dict(zip(fam_x, xs)), "y": ys})
    sub = H[rows]
    cols = np.unique(sub.indices)
    col_cfgs = [_config_from_index(space, int(c), fam_x) for c in cols]
    vals, _ = evaluate_batch(initial, q, fam, col_cfgs, part, tol=tol)
    HPhi = sub[:, cols] @ vals
    qp = q.with_time(fam, t_j + dt)
    qm = q.with_time(fam, t_j - dt)
    pp = finest_partition(qp, model, check=False)
    pm = finest_partition(qm, model, check=False)
    if len(pp.families) != len(part.families) or len(pm.families) != len(part.families):
        raise DomainError("dt too large: family structure changes")
    fp, _ = evaluate_batch(initial, qp, fam, row_cfgs, pp, tol=tol)
    fm, _ = evaluate_batch(initial, qm, fam, row_cfgs, pm, tol=tol)
    return 1j * (fp - fm) / (2 * dt) - HPhi


def family_residual(initial: FockState, q: SpacetimeConfiguration, j: int, dt: float, tol: float = 1e-12,
                    part: FamilyPartition | None = None) -> float:
    return float(np.linalg.norm(family_residual_vector(initial, q, j, dt, tol, part)))


def pde_residual(initial: FockState, q: SpacetimeConfiguration, j: int, dts: Sequence[float] = (0.1, 0.05, 0.025),
                 floor_dt: float = 2e-3, tol: float = 1e-12) -> PDEReport:
    """Residual norms per dt; the floor (residual vector at floor_dt) is subtracted as a vector
    before forming Richardson ratios, since norms of a sum do not subtract."""
    part = _check(q, initial.model, "S", True)
    vecs = [family_residual_vector(initial, q, j, dt, tol, part) for dt in dts]
    fvec = family_residual_vector(initial, q, j, floor_dt, tol, part)
    res = [float(np.linalg.norm(v)) for v in vecs]
    corr = [float(np.linalg.norm(v - fvec)) for v in vecs]
    ratios = [corr[i] / corr[i + 1] for i in range(len(corr) - 1)]
    return PDEReport(list(dts), res, float(np.linalg.norm(fvec)), ratios, corr)


# ---------------------------------------------------------------------------
# two-family (bi-graded) operators for commutator checks


@dataclass
class BiGraded:
    """Function of two families: blocks[(n0, n1)] with axes (fam0 x, fam0 y..., fam1 x, fam1 y...)."""

    model: LatticeModel
    fermions: tuple[int, int]
    nmax: int
    blocks: dict

    def shape(self, n0: int, n1: int) -> tuple:
        return (self.model.n_single,) * (self.fermions[0] + n0 + self.fermions[1] + n1)

    def keys(self):
        return [(a, b) for a in range(self.nmax + 1) for b in range(self.nmax + 1 - a)]

    @classmethod
    def zeros(cls, model, fermions, nmax):
        bg = cls(model, tuple(fermions), nmax, {})
        bg.blocks = {k: np.zeros(bg.shape(*k), dtype=complex) for k in bg.keys()}
        return bg

    def like(self, blocks) -> "BiGraded":
        return BiGraded(self.model, self.fermions, self.nmax, blocks)

    def __add__(self, o):
        return self.like({k: self.blocks[k] + o.blocks[k] for k in self.keys()})

    def __sub__(self, o):
        return self.like({k: self.blocks[k] - o.blocks[k] for k in self.keys()})

    def scale(self, c):
        return self.like({k: c * v for k, v in self.blocks.items()})


def split_state(state: FockState, fam0_x: Sequence[int]) -> BiGraded:
    """Assign fermion labels fam0_x to family 0 (rest to family 1) and split bosons in every way by count."""
    m = state.space.fermions
    fam1_x = [k for k in range(m) if k not in fam0_x]
    bg = BiGraded(state.model, (len(fam0_x), len(fam1_x)), state.space.nmax, {})
    for n0, n1 in bg.keys():
        arr = state.sectors[n0 + n1]
        order = list(fam0_x) + list(range(m, m + n0)) + fam1_x + list(range(m + n0, m + n0 + n1))
        bg.blocks[(n0, n1)] = np.transpose(arr, order).copy()
    return bg


def _family_axes(bg: BiGraded, j: int, n0: int, n1: int) -> tuple[list[int], list[int]]:
    f0, f1 = bg.fermions
    if j == 0:
        return list(range(f0)), list(range(f0, f0 + n0))
    base = f0 + n0
    return list(range(base, base + f1)), list(range(base + f1, base + f1 + n1))


def own_family_apply(bg: BiGraded, j: int) -> BiGraded:
    """Family j's literal Hamiltonian (free, emission into and absorption from its own bosons)."""
    model = bg.model
    out = {k: np.zeros_like(v) for k, v in bg.blocks.items()}
    f = bg.fermions[j]
    for n_o in range(bg.nmax + 1):
        space = Space(model, f, bg.nmax - n_o, n_o)
        H = full_hamiltonian(space).matrix
        keys = [(n, n_o) if j == 0 else (n_o, n) for n in range(space.nmax + 1)]
        mats = []
        for (n0, n1), n in zip(keys, range(space.nmax + 1)):
            arr = bg.blocks[(n0, n1)]
            fx, fy = _family_axes(bg, j, n0, n1)
            fam_axes = fx + fy
            rest = [a for a in range(arr.ndim) if a not in fam_axes]
            moved = np.transpose(arr, fam_axes + rest)
            mats.append(moved.reshape(space.sector_size(n), -1))
        vec = np.concatenate(mats, axis=0)
        res = H @ vec
        for (n0, n1), n in zip(keys, range(space.nmax + 1)):
            arr = bg.blocks[(n0, n1)]
            fx, fy = _family_axes(bg, j, n0, n1)
            fam_axes = fx + fy
            rest = [a for a in range(arr.ndim) if a not in fam_axes]
            blk = res[space.offsets[n]:space.offsets[n + 1]].reshape(tuple(arr.shape[a] for a in fam_axes + rest))
            out[(n0, n1)] = np.transpose(blk, np.argsort(fam_axes + rest))
    return bg.like(out)


def cross_kernel(model: LatticeModel, G_slice: np.ndarray) -> np.ndarray:
    """K[(x r), (x r'), (y s)] = G_{r r' s}(., y - x) as a dense single-particle tensor."""
    n, s = model.n_sites, model.spin
    K = np.zeros((n, s, n, s, n, s), dtype=complex)
    for x in range(n):
        for y in range(n):
            disp = model.displacement(x, y)
            K[x, :, x, :, y, :] = G_slice[:, :, model.site_index(disp), :]
    return K.reshape(n * s, n * s, n * s)


def cross_emission_apply(bg: BiGraded, j: int, K: np.ndarray) -> BiGraded:
    """(1/sqrt N) sum over the other family's bosons of K(y_l - x) acting on family j's fermions."""
    out = {k: np.zeros_like(v) for k, v in bg.blocks.items()}
    o = 1 - j
    for (n0, n1) in bg.keys():
        n_o = n1 if j == 0 else n0
        if n_o == 0:
            continue
        src_key = (n0, n1 - 1) if j == 0 else (n0 - 1, n1)
        src = bg.blocks[src_key]
        fx_src, _ = _family_axes(bg, j, *src_key)
        _, oy_dst = _family_axes(bg, o, n0, n1)
        ins = oy_dst[-1]  # new boson first lands after the other family's existing bosons
        acc = np.zeros(bg.shape(n0, n1), dtype=complex)
        for fax in fx_src:
            T = np.tensordot(K, src, axes=([1], [fax]))  # (new f, new y, src without fax)
            T = np.moveaxis(T, 0, fax + 1)  # (new y, src layout)
            D = np.moveaxis(T, 0, ins)
            for pos in oy_dst:
                acc += np.moveaxis(D, ins, pos)
        out[(n0, n1)] = acc / math.sqrt(n0 + n1)
    return bg.like(out)


_FD6 = (3 / 4, -3 / 20, 1 / 60)


def _fd(fn: Callable[[float], BiGraded], t: float, h: float) -> BiGraded:
    acc = None
    for k, c in enumerate(_FD6, start=1):
        term = (fn(t + k * h) - fn(t - k * h)).scale(c / h)
        acc = term if acc is None else acc + term
    return acc


@dataclass
class CommutatorReport:
    numeric: np.ndarray  # [K_0, K_1] F restricted to block (0, 0)
    analytic: np.ndarray
    agreement: float
    magnitude: float


class TwoFamilyK:
    """K_j = i d/dtau_j - H_j on two families in the hat form: absorption of the other
    family's bosons uses the Green function at the time difference."""

    def __init__(self, model: LatticeModel, fermions: tuple[int, int], nmax: int, green: GreenTable | None = None):
        self.model = model
        self.fermions = fermions
        self.nmax = nmax
        self.green = green or green_function(model, [0.0])
        self._kcache: dict = {}

    def kernel(self, tau: float) -> np.ndarray:
        if tau not in self._kcache:
            self._kcache[tau] = cross_kernel(self.model, self.green.at(tau))
        return self._kcache[tau]

    def H(self, j: int, F: BiGraded, tau: tuple[float, float]) -> BiGraded:
        out = own_family_apply(F, j)
        if self.fermions[j]:
            out = out + cross_emission_apply(F, j, self.kernel(tau[1 - j] - tau[j]))
        return out

    def K(self, j: int, Ffun: Callable[[tuple[float, float]], BiGraded], tau: tuple[float, float], h: float) -> BiGraded:
        def along(s):
            tt = list(tau)
            tt[j] = s
            return Ffun(tuple(tt))

        return _fd(along, tau[j], h).scale(1j) - self.H(j, Ffun(tau), tau)

    def commutator(self, Ffun, tau, h: float = 0.01) -> BiGraded:
        def K1F(tt):
            return self.K(1, Ffun, tt, h)

        def K0F(tt):
            return self.K(0, Ffun, tt, h)

        return self.K(0, K1F, tau, h) - self.K(1, K0F, tau, h)


def analytic_xx_commutator(model: LatticeModel, green: GreenTable, x0: int, x1: int, dtau: float) -> np.ndarray:
    """c-number [H^int_0, H^int_1] as a matrix T[(r0, r1), (r0', r1')], dtau = tau_0 - tau_1.

    term1 = sum_{s, y} a^d phi(y - x0) g*_{r0' r0 s} G_{r1 r1' s}(dtau, y - x1)
    term2 = sum_{s, y} a^d phi(y - x0) g_{r0 r0' s} conj(G_{r1' r1 s}(dtau, y - x1))
    """
    g = model.coupling
    G = green.at(dtau)  # (r, r', site offset, s)
    s = model.spin
    phi_col = model.phi[:, x0]
    ys = np.nonzero(phi_col)[0]
    term1 = np.zeros((s, s, s, s), dtype=complex)
    term2 = np.zeros((s, s, s, s), dtype=complex)
    for y in ys:
        off = model.site_index(model.displacement(x1, y))
        Gy = G[:, :, off, :]  # (r1, r1', s)
        w = model.cell * phi_col[y]
        term1 += w * np.einsum("pas,bqs->abpq", np.conj(g), Gy)  # [r0, r1, r0', r1']
        term2 += w * np.einsum("aps,qbs->abpq", g, np.conj(Gy))
    return (term1 - term2).reshape(s * s, s * s)


def _random_affine(base: BiGraded, taus, rng):
    def rand():
        return base.like({k: rng.normal(size=v.shape) + 1j * rng.normal(size=v.shape) for k, v in base.blocks.items()})

    F0, F1, F2, F12 = rand(), rand(), rand(), rand()

    def Ffun(tt):
        a, b = tt[0] - taus[0], tt[1] - taus[1]
        return F0 + F1.scale(a) + F2.scale(b) + F12.scale(a * b)

    return F0, Ffun


def commutator_residual(model: LatticeModel, kind: str, taus: tuple[float, float], rng: np.random.Generator,
                        x_sites: tuple[int, int] = (0, 0), h: float = 0.01) -> CommutatorReport:
    """Numeric [K_0, K_1] on a random test function of (tau_0, tau_1).

    kind "xx": two single-fermion families, compared with the c-number formula on block (0, 0)
    at the given fermion sites (block (0, 0) is the one untouched by the nmax truncation).
    kind "xy" / "yy": a single-fermion or boson-only family against a boson-only family; the
    commutator should vanish on every block and the analytic value is zero.
    """
    fermions = {"xx": (1, 1), "xy": (1, 0), "yy": (0, 0)}[kind]
    if kind == "xx" and model.nmax < 2:
        raise ValueError("x-x commutator check needs nmax >= 2")
    dt = taus[0] - taus[1]
    green = green_function(model, [0.0, dt, -dt])
    eng = TwoFamilyK(model, fermions, model.nmax, green)
    base = BiGraded.zeros(model, fermions, model.nmax)
    F0, Ffun = _random_affine(base, taus, rng)
    C = eng.commutator(Ffun, taus, h)
    if kind != "xx":
        num = np.concatenate([v.reshape(-1) for v in C.blocks.values()])
        return CommutatorReport(num, np.zeros_like(num), float(np.max(np.abs(num))), 0.0)
    s = model.spin
    i0 = slice(x_sites[0] * s, x_sites[0] * s + s)
    i1 = slice(x_sites[1] * s, x_sites[1] * s + s)
    num = C.blocks[(0, 0)][i0, i1].reshape(-1)
    T = analytic_xx_commutator(model, green, x_sites[0], x_sites[1], dt)
    ana = T @ F0.blocks[(0, 0)][i0, i1].reshape(-1)
    return CommutatorReport(num, ana, float(np.max(np.abs(num - ana))), float(np.max(np.abs(ana))))


def xx_commutator_norm(model: LatticeModel, green: GreenTable, x0: int, x1: int, dtau: float) -> float:
    """Operator norm of the c-number commutator at fixed fermion positions."""
    return float(np.linalg.norm(analytic_xx_commutator(model, green, x0, x1, dtau), 2))


# ---------------------------------------------------------------------------
# propagation locality of Phi


@dataclass
class Support4Row:
    label: str
    time: float
    site: int
    value: float
    outside: bool
    in_domain: bool  # probe configuration is delta-spacelike (the bound is only claimed there)


def allowed_sites(initial: FockState, species: str, t: float, margin: int) -> set[int]:
    model = initial.model
    pad = margin * model.spacing
    sx = support3(initial, "x")
    if species == "x":
        return grow(sx, abs(t) + pad, model)
    sy = support3(initial, "y")
    return grow(sy, abs(t) + pad, model) | grow(sx, abs(t) + model.delta + pad, model)


def support4_scan(initial: FockState, base: SpacetimeConfiguration, label: Label, times: Sequence[float],
                  margin: int = 2, threads: int = 1) -> list[Support4Row]:
    """Move one particle over every site at each time; |Phi| maximised over its spin."""
    model = initial.model
    tasks = []
    domain: dict[float, list[bool]] = {}
    for t in times:
        q = base.replace(label, t=t)
        part = finest_partition(q, model, check=False)
        fam = part.families[part.family_of(label)]
        if len(fam) != 1:
            raise DomainError("probe particle must form its own family")
        cfgs = []
        for site in range(model.n_sites):
            for r in range(model.spin):
                if label[0] == "x":
                    cfgs.append({"x": {label: (site, r)}, "y": []})
                else:
                    cfgs.append({"x": {}, "y": [(site, r)]})
        tasks.append((t, q, part, fam, cfgs))
        domain[t] = [is_delta_spacelike(q.replace(label, site=site), model) for site in range(model.n_sites)]

    def run(task):
        t, q, part, fam, cfgs = task
        vals, _ = evaluate_batch(initial, q, fam, cfgs, part)
        return t, np.abs(vals).reshape(model.n_sites, model.spin).max(axis=1)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(tk) for tk in tasks]
    rows = []
    for t, mags in results:
        allowed = allowed_sites(initial, label[0], t, margin)
        for site in range(model.n_sites):
            rows.append(Support4Row(f"{label[0]}{label[1]}", t, site, float(mags[site]), site not in allowed,
                                    domain[t][site]))
    return rows


# ---------------------------------------------------------------------------
# hat extension


def hat_domain_extend(amplitude: np.ndarray, model: LatticeModel, dt: float) -> np.ndarray:
    """Apply exp(-i H_y dt) to a retained single-boson array (axis over site x spin)."""
    if dt == 0:
        return np.array(amplitude, copy=True)
    h = dirac_one_body(model, model.my).toarray()
    E, V = np.linalg.eigh(h)
    U = V @ (np.exp(-1j * E * dt)[:, None] * V.conj().T)
    return U @ amplitude


def retained_boson(initial: FockState, q: SpacetimeConfiguration, l: int) -> np.ndarray:
    part = finest_partition(q, initial.model)
    j = part.family_of(("y", l))
    if part.families[j] != (("y", l),):
        raise DomainError("boson must form its own family to be retained")
    return evaluate(MultiTimeQuery(q, initial, retained_family=j)).value


# ---------------------------------------------------------------------------
# permutation symmetry


def permuted_target(q: SpacetimeConfiguration, a: Label, b: Label) -> SpacetimeConfiguration:
    pa, pb = q.particle(a), q.particle(b)
    return q.replace(a, t=pb.t, site=pb.site, spin=pb.spin).replace(b, t=pa.t, site=pa.site, spin=pa.spin)


def symmetry_check(initial: FockState, q: SpacetimeConfiguration, a: Label, b: Label) -> tuple[complex, complex, float]:
    """Phi(q) and Phi(q with labels a, b swapped); returns deviation from (anti)symmetry."""
    if a[0] != b[0]:
        raise ValueError("can only swap particles of one species")
    v = phi(initial, q)
    w = phi(initial, permuted_target(q, a, b))
    sign = -1 if a[0] == "x" else 1
    return v, w, abs(w - sign * v)
