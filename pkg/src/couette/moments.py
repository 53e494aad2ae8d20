"""Closed linear ODEs for the one-site layer marginals.

Under a translation-invariant initial law the hole probabilities
``p_hole[k]`` diffuse on the layers with reflecting ends, and the
``p_v[k]`` obey a discrete diffusion with a relaxation term toward equal
zero/vee occupancy plus boundary sources. ``p_zero`` is never stored; it is
``1 - p_hole - p_v``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lattice import ParameterError, Params


@dataclass
class MarginalProfile:
    t: float
    p_hole: np.ndarray
    p_v: np.ndarray

    def __post_init__(self):
        self.p_hole = np.asarray(self.p_hole, dtype=float)
        self.p_v = np.asarray(self.p_v, dtype=float)
        if self.p_hole.shape != self.p_v.shape or self.p_hole.ndim != 1:
            raise ParameterError("p_hole and p_v must be 1-D arrays of equal length")

    @property
    def p_zero(self) -> np.ndarray:
        return 1.0 - self.p_hole - self.p_v

    @property
    def S(self) -> int:
        return self.p_hole.size - 2

    @property
    def mean_particles(self) -> float:
        """Expected number of particles in one column."""
        return float(np.sum(1.0 - self.p_hole))

    def is_probability(self, tol: float = 1e-12) -> bool:
        return bool(
            np.all(self.p_hole >= -tol) and np.all(self.p_v >= -tol)
            and np.all(self.p_hole + self.p_v <= 1 + tol)
        )


def product_profile(params: Params, split: float = 0.5) -> MarginalProfile:
    """Marginals of the i.i.d. product law used by ``lattice.init_product``."""
    n = params.n_layers
    return MarginalProfile(0.0, np.full(n, 1.0 - params.rho), np.full(n, params.rho * split))


def _laplacian(p: np.ndarray) -> np.ndarray:
    # reflecting ends: only one neighbour on layers 0 and S+1
    out = np.empty_like(p)
    out[1:-1] = p[2:] + p[:-2] - 2.0 * p[1:-1]
    out[0] = p[1] - p[0]
    out[-1] = p[-2] - p[-1]
    return out


def derivative(profile: MarginalProfile, params: Params) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives ``(dp_hole, dp_v)`` of the closed one-site equations."""
    if profile.p_hole.size != params.n_layers:
        raise ParameterError(
            f"profile has {profile.p_hole.size} layers, params.S={params.S} needs {params.n_layers}"
        )
    ph, pv = profile.p_hole, profile.p_v
    lam, eps, beta = params.lam, params.eps, params.beta
    dh = lam * _laplacian(ph)
    dv = lam * _laplacian(pv) + eps * (1.0 - ph - 2.0 * pv)
    dv[0] -= beta * pv[0]
    dv[-1] += beta * (1.0 - ph[-1] - pv[-1])
    return dh, dv


def residual(profile: MarginalProfile, params: Params) -> float:
    dh, dv = derivative(profile, params)
    return float(max(np.abs(dh).max(), np.abs(dv).max()))


def stability_bound(params: Params) -> float:
    denom = 4 * params.lam + 4 * params.eps + 2 * params.beta
    return math.inf if denom == 0 else 1.0 / denom


def _rk4(ph, pv, params, h, n):
    def f(a, b):
        return derivative(MarginalProfile(0.0, a, b), params)

    for _ in range(n):
        k1h, k1v = f(ph, pv)
        k2h, k2v = f(ph + 0.5 * h * k1h, pv + 0.5 * h * k1v)
        k3h, k3v = f(ph + 0.5 * h * k2h, pv + 0.5 * h * k2v)
        k4h, k4v = f(ph + h * k3h, pv + h * k3v)
        ph = ph + h / 6.0 * (k1h + 2 * k2h + 2 * k3h + k4h)
        pv = pv + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return ph, pv


def integrate(
    initial: MarginalProfile,
    params: Params,
    t_end: float,
    dt: float,
    sample_times: Optional[Sequence[float]] = None,
) -> list[MarginalProfile]:
    """Classical RK4 from ``initial.t`` to ``t_end``.

    Returns the initial profile, one profile per entry of ``sample_times``
    (strictly inside the interval) and the final profile. Steps are shrunk
    uniformly so every sample time is hit exactly; no step exceeds ``dt``.
    """
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    bound = stability_bound(params)
    if dt > bound:
        raise ParameterError(f"dt={dt} exceeds the stability bound 1/(4 lam + 4 eps + 2 beta) = {bound}")
    t0 = initial.t
    if t_end < t0:
        raise ParameterError("t_end precedes the initial time")
    derivative(initial, params)  # dimension check
    samples = () if sample_times is None else np.asarray(sample_times, dtype=float).ravel()
    targets = sorted(float(t) for t in samples if t0 < t < t_end)
    targets.append(t_end)

    out = [MarginalProfile(t0, initial.p_hole.copy(), initial.p_v.copy())]
    ph, pv, t = initial.p_hole, initial.p_v, t0
    for target in targets:
        span = target - t
        if span <= 0:
            continue
        n = math.ceil(span / dt * (1 - 1e-12))
        ph, pv = _rk4(ph, pv, params, span / n, n)
        t = target
        out.append(MarginalProfile(t, ph.copy(), pv.copy()))
    return out


def trajectory_csv(trajectory: Sequence[MarginalProfile], comment: Optional[str] = None) -> str:
    """CSV with columns ``t,k,p_hole,p_zero,p_v`` (one row per time and layer)."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "k", "p_hole", "p_zero", "p_v"])
    for prof in trajectory:
        for k, (h, z, v) in enumerate(zip(prof.p_hole, prof.p_zero, prof.p_v)):
            writer.writerow([repr(float(prof.t)), k, repr(float(h)), repr(float(z)), repr(float(v))])
    return buf.getvalue()
