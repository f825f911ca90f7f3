"""Registry of named verification checks run by the CLI and the acceptance tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import multitime as mt
from . import toy
from .fock import (FockState, full_space, mass_outside, norm, number_weighted_norm, orbital_packet, product_state,
                   random_state, support3, symmetrize)
from .geometry import SpacetimeConfiguration, finest_partition, grow
from .model import LatticeModel, build_model
from .operators import annihilate, create, full_hamiltonian
from .propagate import (current_divergence_check, evolve, green_dirac_residual, green_function, green_initial,
                        green_mass_outside, interaction_only_evolve, norm_rate_fd, support_mass_outside,
                        trotter_evolve)


@dataclass
class CheckContext:
    model: LatticeModel
    params: dict
    tolerance: float
    rng: np.random.Generator
    seed: int
    initial: Callable[[LatticeModel], FockState]
    threads: int = 1


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    rows: list[dict] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    runtime: float = 0.0
    seed: int = 0


@dataclass
class CheckDef:
    name: str
    func: Callable[[CheckContext], CheckResult]
    tolerance: float
    params: dict
    description: str


REGISTRY: dict[str, CheckDef] = {}


def register(name: str, tolerance: float, description: str, **params):
    def deco(fn):
        REGISTRY[name] = CheckDef(name, fn, tolerance, params, description)
        return fn

    return deco


def _p(ctx: CheckContext, key: str):
    return ctx.params[key]


def _result(ctx: CheckContext, name: str, passed: bool, measured: float, rows, **details) -> CheckResult:
    return CheckResult(name, bool(passed), float(measured), ctx.tolerance, rows, details)


def _config(records) -> SpacetimeConfiguration:
    """Targets in scenarios: {"x": [[t, site, spin], ...], "y": [[t, site, spin], ...]}."""
    return SpacetimeConfiguration.build(records.get("x", []), records.get("y", []))


def _packets_at(model: LatticeModel, q: SpacetimeConfiguration, radius: float) -> FockState:
    spinors = [[1.0, 0.5], [0.3, 1.0], [0.7, -0.4], [0.2, 0.9]]
    orbs = [orbital_packet(model, p.site, radius, (spinors[k % 4] + [0.0] * model.spin)[:model.spin])
            for k, p in enumerate(q.xs)]
    return product_state(full_space(model), orbs)


# ---------------------------------------------------------------------------
# single-time checks


@register("unitarity", 1e-10, "norm preservation and symmetry-projector commutation of U(t)",
          t=1.0, symmetry_tolerance=1e-12, krylov_tolerance=1e-13)
def check_unitarity(ctx: CheckContext) -> CheckResult:
    model, t, tol = ctx.model, _p(ctx, "t"), _p(ctx, "krylov_tolerance")
    psi = ctx.initial(model)
    out = evolve(psi, t, tol=tol)
    ratio = norm(out) / norm(psi)
    raw = random_state(full_space(model), ctx.rng, symmetrized=False)
    a = symmetrize(evolve(raw, t, tol=tol))
    b = evolve(symmetrize(raw), t, tol=tol)
    sym_u = norm(a - b) / norm(raw)
    H = full_hamiltonian(model)
    sym_h = norm(symmetrize(H.apply(raw)) - H.apply(symmetrize(raw))) / norm(raw)
    rows = [{"quantity": "norm_ratio_minus_one", "value": ratio - 1.0},
            {"quantity": "symmetry_defect_U", "value": sym_u},
            {"quantity": "symmetry_defect_H", "value": sym_h}]
    sym_tol = _p(ctx, "symmetry_tolerance")
    ok = abs(ratio - 1) <= ctx.tolerance and max(sym_u, sym_h) <= sym_tol
    return _result(ctx, "unitarity", ok, abs(ratio - 1), rows, symmetry_defect=max(sym_u, sym_h),
                   symmetry_tolerance=sym_tol)


@register("nelson_bounds", 1e-12, "create = annihilate^dagger and both number-operator bounds on random states",
          states=100, pairs=10)
def check_nelson(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    space = full_space(model)
    phi_norm = model.cut.l2_norm
    adj = 0.0
    viol = 0
    worst = 0.0
    rows = []
    ops = [(k, s, annihilate(space, k, s), create(space, k, s)) for k in range(space.fermions) for s in range(model.spin)]
    for _ in range(_p(ctx, "pairs")):
        p = random_state(space, ctx.rng)
        q = random_state(space, ctx.rng)
        for k, s, A, C in ops:
            adj = max(adj, abs(q.inner(A.apply(p)) - C.apply(q).inner(p)))
    for i in range(_p(ctx, "states")):
        p = random_state(space, ctx.rng)
        nN = number_weighted_norm(p, 1)
        nN1 = math.sqrt(nN ** 2 + norm(p) ** 2)
        for k, s, A, C in ops:
            la, lc = norm(A.apply(p)), norm(C.apply(p))
            ra, rc = phi_norm * nN, phi_norm * nN1
            bad = (la > ra * (1 + 1e-12)) + (lc > rc * (1 + 1e-12))
            viol += int(bad)
            worst = max(worst, la / ra, lc / rc)
            rows.append({"state": i, "slot": k, "spin": s, "annihilation_lhs": la, "annihilation_rhs": ra,
                         "creation_lhs": lc, "creation_rhs": rc})
    return _result(ctx, "nelson_bounds", adj <= ctx.tolerance and viol == 0, adj, rows, violations=viol,
                   worst_ratio=worst, phi_l2=phi_norm)


@register("trotter_convergence", 1.8, "first-order Trotter error drops by the given factor per doubling",
          t=1.0, steps=[4, 8, 16, 32])
def check_trotter(ctx: CheckContext) -> CheckResult:
    psi = ctx.initial(ctx.model)
    t = _p(ctx, "t")
    exact = evolve(psi, t, tol=1e-13)
    rows, errs = [], []
    for n in _p(ctx, "steps"):
        e = norm(trotter_evolve(psi, t, n) - exact)
        errs.append(e)
        rows.append({"steps": n, "error": e})
    factors = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    for r, f in zip(rows[1:], factors):
        r["factor"] = f
    return _result(ctx, "trotter_convergence", min(factors) >= ctx.tolerance, min(factors), rows, factors=factors)


@register("green_function", 1e-6, "G(0) = g phi exactly, lattice Dirac residual, tail mass outside delta + |t| + margin",
          times=[round(0.1 * k, 10) for k in range(1, 21)], h=0.02, margin=2, dirac_tolerance=1e-9)
def check_green(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    times = [float(t) for t in _p(ctx, "times")]
    table = green_function(model, [0.0] + times)
    # independent construction of g phi from the sampled cutoff table
    phi_col = np.zeros(model.n_sites)
    for off, val in zip(model.cut.offsets, model.cut.values):
        phi_col[model.site_index(np.asarray(off))] = val
    ref = model.coupling[:, :, None, :] * phi_col[None, None, :, None]
    exact0 = bool(np.array_equal(table.at(0.0), ref))
    rows, worst_mass, worst_res = [], 0.0, 0.0
    for t in times:
        res = green_dirac_residual(table, t, _p(ctx, "h"))
        radius = model.delta + abs(t) + _p(ctx, "margin") * model.spacing
        frac = green_mass_outside(table, t, radius) / green_mass_outside(table, t, -1.0)
        worst_mass, worst_res = max(worst_mass, frac), max(worst_res, res)
        rows.append({"t": t, "dirac_residual": res, "radius": radius, "mass_fraction_outside": frac})
    dtol = _p(ctx, "dirac_tolerance")
    ok = exact0 and worst_res <= dtol and worst_mass <= ctx.tolerance
    return _result(ctx, "green_function", ok, worst_mass, rows, initial_bit_exact=exact0, dirac_residual=worst_res,
                   dirac_tolerance=dtol)


@register("support_growth", 1e-6, "mass outside grown supports (+margin) under full and interaction-only evolution",
          times=[0.5, 1.0, 2.0], margin=2, interaction_tolerance=1e-12)
def check_support_growth(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    psi = ctx.initial(model)
    rows, worst, worst_int = [], 0.0, 0.0
    sx = support3(psi, "x")
    for t in _p(ctx, "times"):
        out = evolve(psi, t, tol=1e-13)
        m = support_mass_outside(psi, out, t, _p(ctx, "margin")) / norm(psi) ** 2
        io = interaction_only_evolve(psi, t)
        mi = mass_outside(io, sx, None) / norm(psi) ** 2
        worst, worst_int = max(worst, m), max(worst_int, mi)
        rows.append({"t": t, "mass_outside_grown": m, "interaction_only_x_mass_outside": mi})
    itol = _p(ctx, "interaction_tolerance")
    return _result(ctx, "support_growth", worst <= ctx.tolerance and worst_int <= itol, worst, rows,
                   interaction_only=worst_int, interaction_tolerance=itol)


@register("current_balance", 1e-10, "global norm rate, telescoping sources, second-order pointwise residual under L -> 2L",
          refinements=[32, 64, 128], length=8.0, packet_radius=3.0, boson_radius=2.5, nmax=1, order_tolerance=0.25)
def check_current(ctx: CheckContext) -> CheckResult:
    # one fermion keeps the L = 128 sector arrays affordable
    base = ctx.model.replace(fermions=1, nmax=min(ctx.model.nmax, int(_p(ctx, "nmax"))))
    rows, residuals = [], []
    glob, tele = 0.0, 0.0
    length = _p(ctx, "length")
    spinors = ([1.0, 0.6], [0.8, 0.5], [0.4, -0.9])
    for L in _p(ctx, "refinements"):
        a = length / L
        model = base.replace(sites=L, spacing=a)
        sp = full_space(model)
        c = L // 2
        u = [s[:model.spin] if model.spin == 2 else [1.0] * model.spin for s in spinors]
        f = orbital_packet(model, c, _p(ctx, "packet_radius"), u[0])
        bosons = [orbital_packet(model, c + L // 8, _p(ctx, "boson_radius"), u[1]),
                  orbital_packet(model, c - L // 8, _p(ctx, "boson_radius"), u[2])]
        psi = product_state(sp, [f])
        for n in range(1, model.nmax + 1):
            psi = psi + product_state(sp, [f], bosons[:n]) * (0.7 ** n)
        rep = current_divergence_check(psi)
        glob = max(glob, abs(rep.global_rate), abs(norm_rate_fd(psi)))
        tele = max(tele, abs(rep.telescoping_total))
        residuals.append(rep.max_residual)
        rows.append({"sites": L, "spacing": a, "max_pointwise_residual": rep.max_residual,
                     "global_rate": rep.global_rate, "telescoping_total": rep.telescoping_total})
    ratios = [residuals[i] / residuals[i + 1] for i in range(len(residuals) - 1)]
    for r, q in zip(rows[1:], ratios):
        r["ratio"] = q
    otol = _p(ctx, "order_tolerance")
    order_ok = abs(ratios[-1] - 4.0) <= 4.0 * otol
    ok = glob <= ctx.tolerance and tele <= ctx.tolerance and order_ok
    return _result(ctx, "current_balance", ok, max(glob, tele), rows, ratios=ratios, order_ok=order_ok)


# ---------------------------------------------------------------------------
# multi-time checks


@register("path_independence", 1e-7, "two-family formula at intermediate times versus staged evaluation",
          consistent=[], violating=[], intermediates=5, packet_radius=2.5, ratio=100.0, free_tolerance=1e-10)
def check_path(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    free = model.replace(coupling=np.zeros_like(model.coupling))
    rows = []
    floor, neg, free_worst = 0.0, math.inf, 0.0
    for kind, targets in (("consistent", _p(ctx, "consistent")), ("violating", _p(ctx, "violating"))):
        for rec in targets:
            q = _config(rec)
            check = kind == "consistent"
            psi = _packets_at(model, q, _p(ctx, "packet_radius"))
            r = mt.path_independence_check(psi, q, _p(ctx, "intermediates"), check=check)
            psi0 = _packets_at(free, q, _p(ctx, "packet_radius"))
            r0 = mt.path_independence_check(psi0, q, _p(ctx, "intermediates"), check=False)
            free_worst = max(free_worst, r0.max_deviation)
            if check:
                floor = max(floor, r.max_deviation)
            else:
                neg = min(neg, r.max_deviation)
            rows.append({"kind": kind, "target": repr(rec), "max_deviation": r.max_deviation,
                         "abs_phi": abs(r.staged), "free_max_deviation": r0.max_deviation})
    ratio = neg / floor if floor > 0 else math.inf
    ftol = _p(ctx, "free_tolerance")
    ok = floor <= ctx.tolerance and ratio >= _p(ctx, "ratio") and free_worst <= ftol
    return _result(ctx, "path_independence", ok, floor, rows, negative_min=neg, ratio=ratio, free_max=free_worst,
                   free_tolerance=ftol)


@register("pde_residual", 0.25, "every family's equation: Richardson ratio 4 after floor subtraction",
          target={}, dts=[0.1, 0.05, 0.025], floor_dt=2e-3)
def check_pde(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    q = _config(_p(ctx, "target"))
    psi = ctx.initial(model)
    part = finest_partition(q, model)
    rows, worst = [], 0.0
    for j in range(len(part.families)):
        rep = mt.pde_residual(psi, q, j, _p(ctx, "dts"), _p(ctx, "floor_dt"))
        dev = max(abs(r / 4.0 - 1.0) for r in rep.ratios)
        worst = max(worst, dev)
        for dt, res in zip(rep.dts, rep.residuals):
            rows.append({"family": j, "labels": " ".join(f"{a}{b}" for a, b in part.families[j]), "dt": dt,
                         "residual": res, "floor": rep.floor})
        for k, r in enumerate(rep.ratios):
            rows.append({"family": j, "labels": "", "dt": rep.dts[k], "residual": float("nan"), "floor": rep.floor,
                         "ratio": r})
    return _result(ctx, "pde_residual", worst <= ctx.tolerance, worst, rows, families=len(part.families))


@register("commutator", 1e-6, "numeric vs analytic x-x commutator, vanishing beyond the safety distance, x-y and y-y",
          taus=[[0.3, 0.0], [0.0, 0.5], [1.0, 0.0]], agreement_pairs=[[0, 1], [0, 2], [0, 3]], agreement_sites=8,
          margin=2, h=0.01, xy_tolerance=1e-9, nonzero_threshold=1e-6)
def check_commutator(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    # the operator-level comparison is dense in the (0, 0) block; keep it on a short ring
    small_model = model.replace(sites=int(_p(ctx, "agreement_sites")))
    rows = []
    agree, beyond, inside = 0.0, 0.0, 0.0
    for taus in _p(ctx, "taus"):
        taus = (float(taus[0]), float(taus[1]))
        for x0, x1 in _p(ctx, "agreement_pairs"):
            rep = mt.commutator_residual(small_model, "xx", taus, ctx.rng, (x0, x1), _p(ctx, "h"))
            agree = max(agree, rep.agreement)
            rows.append({"case": "xx_agreement", "tau0": taus[0], "tau1": taus[1], "x0": x0, "x1": x1,
                         "numeric": float(np.max(np.abs(rep.numeric))), "analytic": rep.magnitude,
                         "difference": rep.agreement})
        dtau = taus[0] - taus[1]
        green = green_function(model, [dtau])
        safe = abs(dtau) + 2 * model.delta
        for x1 in range(model.n_sites):
            dist = model.distance(0, x1)
            val = mt.xx_commutator_norm(model, green, 0, x1, dtau)
            region = "beyond" if dist > safe + _p(ctx, "margin") * model.spacing else (
                "inside" if dist < safe else "margin")
            if region == "beyond":
                beyond = max(beyond, val)
            elif region == "inside":
                inside = max(inside, val)
            rows.append({"case": "xx_scan", "tau0": taus[0], "tau1": taus[1], "x0": 0, "x1": x1, "distance": dist,
                         "region": region, "analytic": val})
    small = 0.0
    xy_model = small_model.replace(fermions=1)
    for kind in ("xy", "yy"):
        for taus in _p(ctx, "taus"):
            rep = mt.commutator_residual(xy_model, kind, (float(taus[0]), float(taus[1])), ctx.rng, h=_p(ctx, "h"))
            small = max(small, rep.agreement)
            rows.append({"case": kind, "tau0": taus[0], "tau1": taus[1], "numeric": rep.agreement})
    xy_tol = _p(ctx, "xy_tolerance")
    ok = agree <= ctx.tolerance and beyond <= ctx.tolerance and inside > _p(ctx, "nonzero_threshold") and small <= xy_tol
    return _result(ctx, "commutator", ok, max(agree, beyond), rows, agreement=agree, beyond=beyond,
                   inside_max=inside, xy_yy=small, xy_tolerance=xy_tol)


@register("support4", 1e-6, "|Phi| outside the grown 4-supports (+margin), with a positive emission control",
          cases=[], times=[0.5, 1.0], margin=2, positive_threshold=1e-6)
def check_support4(ctx: CheckContext) -> CheckResult:
    """Each case is {"base": target, "probes": [[species, index], ...], "times": optional override}."""
    model = ctx.model
    psi = ctx.initial(model)
    rows, worst_out, best_in = [], 0.0, 0.0
    sx = support3(psi, "x")
    for k, case in enumerate(_p(ctx, "cases")):
        base = _config(case["base"])
        times = case.get("times", _p(ctx, "times"))
        for probe in case["probes"]:
            label = (probe[0], int(probe[1]))
            scan = mt.support4_scan(psi, base, label, times, _p(ctx, "margin"), ctx.threads)
            for r in scan:
                # positive control: boson probe inside the emission region around the fermion support
                emission = label[0] == "y" and r.site in grow(sx, abs(r.time) + model.delta, model)
                if r.in_domain and r.outside:
                    worst_out = max(worst_out, r.value)
                elif r.in_domain and emission:
                    best_in = max(best_in, r.value)
                rows.append({"case": k, "probe": r.label, "t": r.time, "site": r.site, "abs_phi": r.value,
                             "outside": r.outside, "in_domain": r.in_domain, "emission_region": emission})
    ok = worst_out <= ctx.tolerance and best_in > _p(ctx, "positive_threshold")
    return _result(ctx, "support4", ok, worst_out, rows, positive_control=best_in)


@register("symmetry", 1e-9, "fermion swaps flip sign, boson swaps across families leave Phi unchanged",
          targets=[], swaps=[])
def check_symmetry(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    psi = ctx.initial(model)
    rows, worst = [], 0.0
    for rec, swap in zip(_p(ctx, "targets"), _p(ctx, "swaps")):
        q = _config(rec)
        a, b = (swap[0][0], int(swap[0][1])), (swap[1][0], int(swap[1][1]))
        v, w, dev = mt.symmetry_check(psi, q, a, b)
        scale = max(abs(v), 1e-300)
        worst = max(worst, dev / scale)
        rows.append({"target": repr(rec), "swap": f"{a[0]}{a[1]}<->{b[0]}{b[1]}", "phi": abs(v), "phi_swapped": abs(w),
                     "relative_deviation": dev / scale})
    return _result(ctx, "symmetry", worst <= ctx.tolerance, worst, rows)


@register("hat_domain", 1e-7, "free-boson time shift of a retained boson versus staged evaluation",
          target={}, boson=0, shifts=[0.2, -0.2, 0.4], roundtrip_tolerance=1e-10)
def check_hat(ctx: CheckContext) -> CheckResult:
    model = ctx.model
    psi = ctx.initial(model)
    q = _config(_p(ctx, "target"))
    l = int(_p(ctx, "boson"))
    arr = mt.retained_boson(psi, q, l)
    rows, worst, rt = [], 0.0, float(np.max(np.abs(mt.hat_domain_extend(arr, model, 0.0) - arr)))
    yb = q.ys[l]
    for dt in _p(ctx, "shifts"):
        ext = mt.hat_domain_extend(arr, model, dt)
        back = mt.hat_domain_extend(ext, model, -dt)
        rt = max(rt, float(np.max(np.abs(back - arr))))
        q2 = q.replace(("y", l), t=yb.t + dt)
        direct = mt.phi(psi, q2)
        idx = yb.site * model.spin + yb.spin
        diff = abs(ext[idx] - direct)
        worst = max(worst, diff)
        rows.append({"shift": dt, "extended": abs(ext[idx]), "direct": abs(direct), "difference": diff,
                     "roundtrip": float(np.max(np.abs(back - arr)))})
    rtol = _p(ctx, "roundtrip_tolerance")
    return _result(ctx, "hat_domain", worst <= ctx.tolerance and rt <= rtol, worst, rows, roundtrip=rt,
                   roundtrip_tolerance=rtol)


@register("toy_counterexample", 1e-10, "sector chain: exact residuals, defect in the top sector, vanishing at 0+",
          nmax=4, g=[0.5, 0.25], sample_times=[0.5, 1.0, 2.0], threshold=1e-12, evolve_time=1.7)
def check_toy(ctx: CheckContext) -> CheckResult:
    g = complex(*_p(ctx, "g"))
    nmax = int(_p(ctx, "nmax"))
    fam = toy.polynomial_recursion(nmax, g)
    rows = []
    sym_ok = all(r.is_zero for r in toy.symbolic_residuals(fam)[:-1]) and \
        all(r.is_zero for r in toy.symbolic_residuals(fam, True)[:-1])
    top_nonzero = not toy.symbolic_residuals(fam)[-1].is_zero
    worst = 0.0
    for t in _p(ctx, "sample_times"):
        for tt in (t, -t):
            res = toy.numeric_residuals(fam, tt)
            worst = max(worst, float(np.max(np.abs(res[:-1]))))
            for n, r in enumerate(res):
                rows.append({"t": tt, "sector": n, "residual": abs(r)})
    prof = toy.vanishing_profile(fam, threshold=_p(ctx, "threshold"))
    vanish_ok = bool(np.all(np.isfinite(prof.t_star)))
    zero = toy.toy_evolve(toy.ToyState(np.zeros(nmax + 1, dtype=complex), g), _p(ctx, "evolve_time"))
    zero_ok = bool(np.all(zero.amplitudes == 0))
    for n, ts in enumerate(prof.t_star):
        rows.append({"t": float("nan"), "sector": n, "residual": float("nan"), "t_star": ts})
    ok = sym_ok and top_nonzero and worst <= ctx.tolerance and vanish_ok and zero_ok
    return _result(ctx, "toy_counterexample", ok, worst, rows, symbolic_exact=sym_ok, top_sector_defect=top_nonzero,
                   t_star=[float(x) for x in prof.t_star], zero_stays_zero=zero_ok)


def catalog() -> list[dict[str, Any]]:
    return [{"name": d.name, "tolerance": d.tolerance, "params": d.params, "description": d.description}
            for d in REGISTRY.values()]


def run_check(name: str, ctx: CheckContext) -> CheckResult:
    if name not in REGISTRY:
        raise KeyError(f"unknown check {name!r}")
    t0 = time.perf_counter()
    res = REGISTRY[name].func(ctx)
    res.runtime = time.perf_counter() - t0
    res.seed = ctx.seed
    return res
