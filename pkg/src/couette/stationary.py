"""Stationary layer profiles: closed forms, a direct linear solve, and the
large-S limit profiles that separate laminar from turbulent behaviour.

With ``rho`` the particle density, holes are uniform (``1 - rho`` on every
layer) and the vee probabilities solve a tridiagonal system. At ``eps = 0``
the solution is linear in the layer index; for ``eps > 0`` it is a
combination of ``z1**k`` and ``z2**k`` where ``z1 * z2 = 1``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import ParameterError, Params

# below this eps/lam the two characteristic roots are treated as the double root 1
RESONANCE_THRESHOLD = 1e-8
K_LAMINAR = 0.3
K_TURBULENT = 10.0


@dataclass
class StationaryProfile:
    mu_hole: np.ndarray
    mu_v: np.ndarray
    rho: float
    z1: Optional[float]
    z2: Optional[float]
    K: float
    regime: str

    @property
    def mu_zero(self) -> np.ndarray:
        return 1.0 - self.mu_hole - self.mu_v

    @property
    def S(self) -> int:
        return self.mu_v.size - 2

    def to_csv(self, comment: Optional[str] = None) -> str:
        """CSV with columns ``k,u,mu_hole,mu_zero,mu_v``, ``u = k/(S+1)``."""
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "u", "mu_hole", "mu_zero", "mu_v"])
        for k in range(self.mu_v.size):
            writer.writerow([
                k, repr(k / (self.S + 1)), repr(float(self.mu_hole[k])),
                repr(float(self.mu_zero[k])), repr(float(self.mu_v[k])),
            ])
        return buf.getvalue()

    def regime_report(self) -> dict:
        return {"K": self.K, "regime": self.regime, "z1": self.z1, "z2": self.z2, "rho": self.rho}


def _require_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ParameterError(f"{name} must be > 0, got {value!r}")


def _wrap(params: Params, mu_v: np.ndarray) -> StationaryProfile:
    if params.eps > 0 and params.lam > 0:
        z1, z2 = characteristic_roots(params.eps, params.lam)
    else:
        z1 = z2 = None
    label, K = classify_regime(params)
    return StationaryProfile(
        mu_hole=np.full(params.n_layers, 1.0 - params.rho),
        mu_v=mu_v,
        rho=params.rho,
        z1=z1,
        z2=z2,
        K=K,
        regime=label,
    )


def linear_profile(params: Params) -> StationaryProfile:
    """Laminar profile ``rho (k + lam/beta) / (S + 1 + 2 lam/beta)`` of the unperturbed model."""
    _require_positive(beta=params.beta, lam=params.lam)
    r = params.lam / params.beta
    k = np.arange(params.n_layers)
    mu_v = params.rho * (k + r) / (params.S + 1 + 2 * r)
    prof = _wrap(params, mu_v)
    prof.regime = "laminar"
    return prof


def characteristic_roots(epsilon: float, lam: float) -> tuple[float, float]:
    """Roots of ``lam z^2 + lam - 2 (lam + eps) z = 0``, larger first."""
    if not lam > 0:
        raise ParameterError(f"lambda must be > 0, got {lam!r}")
    if epsilon < 0:
        raise ParameterError(f"epsilon must be >= 0, got {epsilon!r}")
    a = epsilon / lam
    # sqrt((1+a)^2 - 1) written without the cancelling subtraction
    z1 = 1.0 + a + math.sqrt(a * (a + 2.0))
    return z1, 1.0 / z1


def boundary_factor(z: float, params: Params) -> float:
    """``b(z) = 1 + (2 eps + lam (1 - 1/z)) / beta``."""
    if z == 0:
        raise ParameterError("boundary factor undefined at z = 0")
    _require_positive(beta=params.beta)
    return 1.0 + (2.0 * params.eps + params.lam * (1.0 - 1.0 / z)) / params.beta


def explicit_profile(params: Params) -> StationaryProfile:
    """Closed-form stationary profile for ``eps >= 0``.

    Below the resonance threshold the linear profile is returned. Otherwise
    numerator and denominator are divided by ``z1**(S+1)`` so only powers of
    ``z2 < 1`` appear, which keeps large S finite.
    """
    _require_positive(beta=params.beta, lam=params.lam)
    if params.eps / params.lam < RESONANCE_THRESHOLD:
        return linear_profile(params)
    S, rho = params.S, params.rho
    z1, z2 = characteristic_roots(params.eps, params.lam)
    b1, b2 = boundary_factor(z1, params), boundary_factor(z2, params)
    k = np.arange(S + 2)
    num = b1 * z2**k - b2 * z2 ** (2 * S + 2 - k) - b1 * z2 ** (S + 1 - k) + b2 * z2 ** (S + 1 + k)
    den = 2.0 * (b1 * b1 - b2 * b2 * z2 ** (2 * S + 2))
    return _wrap(params, rho / 2 - rho * num / den)


def thomas_solve(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower[i]`` multiplies ``x[i-1]`` and ``upper[i]`` multiplies ``x[i+1]``;
    ``lower[0]`` and ``upper[-1]`` are ignored. No pivoting.
    """
    n = len(diag)
    c = np.zeros(n)
    d = np.zeros(n)
    denom = diag[0]
    if denom == 0:
        raise ZeroDivisionError("zero pivot in tridiagonal elimination")
    c[0] = upper[0] / denom if n > 1 else 0.0
    d[0] = rhs[0] / denom
    for i in range(1, n):
        denom = diag[i] - lower[i] * c[i - 1]
        if denom == 0:
            raise ZeroDivisionError("zero pivot in tridiagonal elimination")
        c[i] = upper[i] / denom if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom
    x = np.empty(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def stationary_system(params: Params):
    """Tridiagonal coefficients ``(lower, diag, upper, rhs)`` of the stationary vee equations."""
    n = params.n_layers
    lam, eps, beta, rho = params.lam, params.eps, params.beta, params.rho
    lower = np.full(n, lam)
    upper = np.full(n, lam)
    diag = np.full(n, -2.0 * (lam + eps))
    rhs = np.full(n, -eps * rho)
    lower[0] = upper[-1] = 0.0
    diag[0] = diag[-1] = -(lam + 2.0 * eps + beta)
    rhs[-1] -= beta * rho
    return lower, diag, upper, rhs


def solve_stationary_system(params: Params) -> StationaryProfile:
    """Stationary profile from a direct elimination of the layer equations."""
    if params.beta == 0 and params.eps == 0:
        raise ParameterError(
            "beta = eps = 0: stationary vee equations are singular; the profile is only "
            "determined up to the conserved vee count of the initial law"
        )
    if params.lam < 0:
        raise ParameterError("lambda must be >= 0")
    mu_v = thomas_solve(*stationary_system(params))
    return _wrap(params, mu_v)


def limit_profile_gK(K: float, rho: float, u: float) -> float:
    """``rho/2 * (1 + sinh(K (u - 1/2)) / sinh(K/2))`` for ``u`` in (0, 1)."""
    if not 0.0 < u < 1.0:
        raise ParameterError(f"u must lie in (0, 1), got {u!r}")
    if not K > 0:
        raise ParameterError(f"K must be > 0, got {K!r}")
    if K < 1e-6:
        return rho * u
    if K > 50:
        d = abs(u - 0.5)
        ratio = math.exp(-K * min(u, 1.0 - u)) * (-math.expm1(-2 * K * d)) / (-math.expm1(-K))
        return rho / 2 * (1.0 + math.copysign(ratio, u - 0.5))
    return rho / 2 * (1.0 + math.sinh(K * (u - 0.5)) / math.sinh(K / 2))


def reynolds_analog(params: Params) -> float:
    """``K = S sqrt(2 eps / lam)``."""
    if not params.lam > 0:
        raise ParameterError(f"lambda must be > 0, got {params.lam!r}")
    return params.S * math.sqrt(2.0 * params.eps / params.lam)


def eps_for_K(K: float, S: int, lam: float) -> float:
    """Perturbation rate putting an S-layer strip at Reynolds analog ``K``."""
    return lam * K * K / (2.0 * S * S)


def classify_regime(params: Params) -> tuple[str, float]:
    """Heuristic finite-S regime label from K: laminar, critical or turbulent."""
    if params.lam <= 0:
        return ("turbulent" if params.eps > 0 else "laminar"), (math.inf if params.eps > 0 else 0.0)
    K = reynolds_analog(params)
    if K <= K_LAMINAR:
        return "laminar", K
    if K >= K_TURBULENT:
        return "turbulent", K
    return "critical", K


def profile_at_fraction(mu_v: np.ndarray, S: int, u: float) -> float:
    """``mu_v[floor(u S)]``."""
    # tolerance absorbs products like 0.29 * 100 = 28.999999999999996
    return float(mu_v[int(math.floor(u * S + 1e-9))])
