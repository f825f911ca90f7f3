"""Zero-dimensional sector chain: i dPsi_N/dt = g* Psi_{N+1} + g Psi_{N-1}.

Smooth solutions with zero initial data exist when the chain is infinite; they are
built from polynomials P_N, Pt_N in nu = 1/t. On a truncated chain the top sector
carries the whole defect, and the unitary truncated evolution is unique.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import sympy as sp
from sympy import QQ_I

NU = sp.Symbol("nu")
T = sp.Symbol("t", positive=True)


class ToyError(ValueError):
    pass


def exact_coupling(g) -> sp.Expr:
    """Coerce g to an exact Gaussian rational (floats are read via their decimal repr)."""
    if isinstance(g, sp.Expr):
        val = sp.nsimplify(g)
    else:
        c = complex(g)
        val = sp.Rational(repr(c.real)) + sp.I * sp.Rational(repr(c.imag))
    if val == 0:
        raise ToyError("coupling must be nonzero")
    return val


@dataclass
class ToyState:
    amplitudes: np.ndarray
    g: complex

    @property
    def nmax(self) -> int:
        return len(self.amplitudes) - 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass
class PolynomialFamily:
    g: sp.Expr
    nmax: int  # truncation level; P and Pt run one order further (N = -1..nmax+1)
    P: list[sp.Poly]  # index N + 1, so P[0] is P_{-1}
    Pt: list[sp.Poly]

    def poly(self, n: int, tilde: bool = False) -> sp.Poly:
        return (self.Pt if tilde else self.P)[n + 1]

    def coefficients(self, n: int, tilde: bool = False) -> list[complex]:
        """Coefficients in increasing powers of nu."""
        return [complex(c) for c in reversed(self.poly(n, tilde).all_coeffs())]


def _const(expr) -> sp.Poly:
    return sp.Poly(sp.expand(expr), NU, domain=QQ_I)


def polynomial_recursion(nmax: int, g) -> PolynomialFamily:
    """P_{N+1} = (i/g*) nu^2 (P_N - P_N') - (g/g*) P_{N-1}; tilde version with -(i/g*) nu^2 (P_N + P_N').

    Computed up to N = nmax + 1 so that the truncation defect of sector nmax is available.
    """
    g = exact_coupling(g)
    gs = sp.conjugate(g)
    a = _const(sp.I / gs)
    b = _const(g / gs)
    nu2 = sp.Poly(NU ** 2, NU, domain=QQ_I)
    P = [sp.Poly(0, NU, domain=QQ_I), sp.Poly(1, NU, domain=QQ_I)]
    Pt = [sp.Poly(0, NU, domain=QQ_I), sp.Poly(1, NU, domain=QQ_I)]
    for _ in range(nmax + 1):
        p, pm = P[-1], P[-2]
        P.append(nu2 * (p - p.diff(NU)) * a - pm * b)
        p, pm = Pt[-1], Pt[-2]
        Pt.append(-(nu2 * (p + p.diff(NU))) * a - pm * b)
    return PolynomialFamily(g, nmax, P, Pt)


def sector_residual_poly(fam: PolynomialFamily, n: int, tilde: bool = False) -> sp.Poly:
    """Polynomial R with residual_N(t) = R(1/t) e^{-|1/t|} on the truncated chain (0..nmax)."""
    g = _const(fam.g)
    gs = _const(sp.conjugate(fam.g))
    nu2 = sp.Poly(NU ** 2, NU, domain=QQ_I)
    p = fam.poly(n, tilde)
    # d/dt [P(1/t) e^{-1/t}] = nu^2 (P - P') e^{-1/t};  tilde: -nu^2 (P + P') e^{1/t}
    dp = nu2 * (p - p.diff(NU)) if not tilde else -(nu2 * (p + p.diff(NU)))
    res = dp * _const(sp.I) - fam.poly(n - 1, tilde) * g
    if n < fam.nmax:
        res = res - fam.poly(n + 1, tilde) * gs
    return res


def symbolic_residuals(fam: PolynomialFamily, tilde: bool = False) -> list[sp.Poly]:
    return [sector_residual_poly(fam, n, tilde) for n in range(fam.nmax + 1)]


def derivative_identity(fam: PolynomialFamily, n: int) -> sp.Expr:
    """d/dt [P_N(1/t) e^{-1/t}] + i (g* P_{N+1} + g P_{N-1})(1/t) e^{-1/t}, simplified (should be 0)."""
    g = fam.g
    expr = fam.poly(n).as_expr().subs(NU, 1 / T) * sp.exp(-1 / T)
    rhs = -sp.I * (sp.conjugate(g) * fam.poly(n + 1).as_expr() + g * fam.poly(n - 1).as_expr()).subs(NU, 1 / T)
    return sp.simplify(sp.expand((sp.diff(expr, T) - rhs * sp.exp(-1 / T)) * sp.exp(1 / T)))


def _eval_poly(p: sp.Poly, nu: float) -> complex:
    return complex(sum(complex(c) * nu ** k for k, c in enumerate(reversed(p.all_coeffs()))))


def log_magnitude(p: sp.Poly, t: float) -> float:
    """log |P(1/t) e^{-|1/t|}|, safe for t near 0 where the exponential underflows."""
    nu = 1.0 / t
    coeffs = [complex(c) for c in reversed(p.all_coeffs())]
    terms = [(math.log(abs(c)) + k * math.log(abs(nu)), c / abs(c) * (1 if nu > 0 or k % 2 == 0 else -1))
             for k, c in enumerate(coeffs) if c != 0]
    if not terms:
        return -math.inf
    top = max(lt for lt, _ in terms)
    s = sum(ph * math.exp(lt - top) for lt, ph in terms)
    if s == 0:
        return -math.inf
    return top + math.log(abs(s)) - abs(nu)


def counterexample_state(t: float, fam: PolynomialFamily) -> ToyState:
    """Psi_N(t) for N = 0..nmax: P_N(1/t) e^{-1/t} (t > 0), 0 (t = 0), Pt_N(1/t) e^{1/t} (t < 0)."""
    amps = np.zeros(fam.nmax + 1, dtype=complex)
    if t != 0:
        for n in range(fam.nmax + 1):
            p = fam.poly(n, tilde=t < 0)
            lm = log_magnitude(p, t)
            if lm == -math.inf or lm < -700:
                continue
            v = _eval_poly(p, 1.0 / t)
            amps[n] = v / abs(v) * math.exp(lm) if v != 0 else 0.0
    return ToyState(amps, complex(fam.g))


def numeric_residuals(fam: PolynomialFamily, t: float) -> np.ndarray:
    """Sector residuals of the truncated chain in floating point.

    Psi_N and dPsi_N/dt (symbolic derivative) are evaluated separately and combined
    numerically, so cancellation is a floating-point statement, not a symbolic one.
    """
    tilde = t < 0
    nu = 1.0 / t
    e = math.exp(-abs(nu))
    nu2 = sp.Poly(NU ** 2, NU, domain=QQ_I)
    psi = np.array([_eval_poly(fam.poly(n, tilde), nu) * e for n in range(fam.nmax + 1)])
    dpsi = np.zeros_like(psi)
    for n in range(fam.nmax + 1):
        p = fam.poly(n, tilde)
        dp = nu2 * (p - p.diff(NU)) if not tilde else -(nu2 * (p + p.diff(NU)))
        dpsi[n] = _eval_poly(dp, nu) * e
    g = complex(fam.g)
    up = np.concatenate([psi[1:], [0]])
    down = np.concatenate([[0], psi[:-1]])
    return 1j * dpsi - np.conj(g) * up - g * down


def fd_residuals(fam: PolynomialFamily, t: float, h: float = 1e-4) -> np.ndarray:
    """Same residuals with the time derivative taken by central differences of the evaluated state."""
    sp_ = counterexample_state(t + h, fam).amplitudes
    sm = counterexample_state(t - h, fam).amplitudes
    s0 = counterexample_state(t, fam).amplitudes
    g = complex(fam.g)
    dpsi = (sp_ - sm) / (2 * h)
    up = np.concatenate([s0[1:], [0]])
    down = np.concatenate([[0], s0[:-1]])
    return 1j * dpsi - np.conj(g) * up - g * down


@dataclass
class VanishingProfile:
    times: np.ndarray
    log10_magnitude: np.ndarray  # (len(times), nmax + 1)
    t_star: np.ndarray  # per sector; nan if never below threshold on the grid


def vanishing_profile(fam: PolynomialFamily, t_min: float = 1e-3, t_max: float = 1.0, points: int = 200,
                      threshold: float = 1e-12) -> VanishingProfile:
    """|Psi_N(t)| on a geometric grid; t* is the largest grid time below which |Psi_N| stays under
    the threshold and decreases monotonically towards t = 0."""
    ts = np.geomspace(t_min, t_max, points)
    lm = np.array([[log_magnitude(fam.poly(n), t) / math.log(10) for n in range(fam.nmax + 1)] for t in ts])
    tstar = np.full(fam.nmax + 1, np.nan)
    lt = math.log10(threshold)
    for n in range(fam.nmax + 1):
        col = lm[:, n]
        k = 0
        while k < len(ts) and col[k] < lt and (k == 0 or col[k] >= col[k - 1]):
            k += 1
        if k:
            tstar[n] = ts[k - 1]
    return VanishingProfile(ts, lm, tstar)


def toy_hamiltonian(nmax: int, g: complex) -> np.ndarray:
    H = np.zeros((nmax + 1, nmax + 1), dtype=complex)
    for n in range(nmax):
        H[n, n + 1] = np.conj(g)
        H[n + 1, n] = g
    return H


def toy_evolve(initial: ToyState, t: float) -> ToyState:
    H = toy_hamiltonian(initial.nmax, initial.g)
    E, V = np.linalg.eigh(H)
    U = V @ (np.exp(-1j * E * t)[:, None] * V.conj().T)
    return ToyState(U @ initial.amplitudes, initial.g)


def rabi(initial: ToyState, t: float) -> ToyState:
    """Closed form for nmax = 1: U = cos(|g| t) - i sin(|g| t) H / |g|."""
    if initial.nmax != 1:
        raise ToyError("Rabi formula needs exactly two sectors")
    g = initial.g
    w = abs(g)
    H = toy_hamiltonian(1, g)
    U = math.cos(w * t) * np.eye(2) - 1j * math.sin(w * t) * H / w
    return ToyState(U @ initial.amplitudes, g)
