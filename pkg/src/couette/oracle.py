"""Exact finite-state chain for a single column.

The column process swaps neighbouring layers at rate ``lam``, flips the
boundary layers at rate ``beta`` and perturbs occupied sites at rate
``eps``; there is no horizontal flow. Its one-site marginals satisfy the
same closed equations as the layer marginals of the strip process, so it
serves as ground truth for ``moments`` at small S.

States are integers in base 3: digit ``k`` is the value of layer ``k``.
The number of holes is conserved, so the chain splits into sectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .lattice import ParameterError, Params, Velocity
from .moments import MarginalProfile

MAX_S = 8
DIRECT_SOLVE_MAX = 2000  # larger sectors fill in badly under sparse LU
HOLE, ZERO, VEE = int(Velocity.HOLE), int(Velocity.ZERO), int(Velocity.VEE)


class CapacityError(ParameterError):
    pass


class ReducibleSectorError(RuntimeError):
    pass


def state_digits(S: int) -> np.ndarray:
    """Layer values of every state, shape ``(3**(S+2), S+2)``."""
    L = S + 2
    idx = np.arange(3**L)
    return (idx[:, None] // 3 ** np.arange(L)) % 3


def encode(values) -> int:
    return int(sum(int(v) * 3**k for k, v in enumerate(values)))


def decode(index: int, S: int) -> tuple[Velocity, ...]:
    return tuple(Velocity((index // 3**k) % 3) for k in range(S + 2))


@dataclass
class GeneratorMatrix:
    Q: sp.csr_matrix
    S: int
    holes: np.ndarray  # hole count of each state

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]

    def sector(self, n: int) -> np.ndarray:
        return np.nonzero(self.holes == n)[0]

    def to_csv(self) -> str:
        coo = self.Q.tocoo()
        lines = ["row,col,rate"]
        lines += [f"{r},{c},{float(v)!r}" for r, c, v in zip(coo.row, coo.col, coo.data)]
        return "\n".join(lines) + "\n"


def build_generator(params: Params) -> GeneratorMatrix:
    S = params.S
    if S > MAX_S:
        raise CapacityError(f"S={S} exceeds the exact-chain cap S <= {MAX_S} (3**{MAX_S + 2} states)")
    L = S + 2
    d = state_digits(S)
    idx = np.arange(d.shape[0])
    pw = 3 ** np.arange(L)
    rows, cols, rates = [], [], []

    def add(mask, target, rate):
        if rate > 0 and mask.any():
            rows.append(idx[mask])
            cols.append(target[mask])
            rates.append(np.full(int(mask.sum()), float(rate)))

    for k in range(L - 1):
        a, b = d[:, k], d[:, k + 1]
        add(a != b, idx + (b - a) * pw[k] + (a - b) * pw[k + 1], params.lam)
    add(d[:, 0] == VEE, idx - pw[0], params.beta)
    add(d[:, -1] == ZERO, idx + pw[-1], params.beta)
    for k in range(L):
        add(d[:, k] == ZERO, idx + pw[k], params.eps)
        add(d[:, k] == VEE, idx - pw[k], params.eps)

    n = idx.size
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(rates)
    else:
        r = c = np.empty(0, dtype=int)
        v = np.empty(0)
    off = sp.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()  # duplicates summed
    off.eliminate_zeros()
    Q = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    return GeneratorMatrix(Q=Q, S=S, holes=(d == HOLE).sum(axis=1))


def _check_distribution(pi, n):
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (n,):
        raise ParameterError(f"distribution has shape {pi.shape}, expected ({n},)")
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise ParameterError("distribution must be nonnegative and sum to 1")
    return pi


def evolve(pi0, gen: GeneratorMatrix, t: float, tol: float = 1e-10) -> np.ndarray:
    """Transient law ``pi0 @ expm(Q t)`` by uniformization.

    The horizon is cut into chunks with ``q h <= 30`` (``q`` the largest exit
    rate) so the Poisson weights never underflow; each chunk's truncated
    Poisson tail is below ``tol / n_chunks``.
    """
    pi = _check_distribution(pi0, gen.n_states)
    if t < 0:
        raise ParameterError("t must be >= 0")
    q = float(-gen.Q.diagonal().min()) if gen.n_states else 0.0
    if t == 0 or q == 0:
        return pi.copy()
    n_chunks = max(1, math.ceil(q * t / 30.0))
    h = t / n_chunks
    qh = q * h
    PT = (sp.identity(gen.n_states, format="csr") + gen.Q / q).T.tocsr()
    chunk_tol = tol / n_chunks
    for _ in range(n_chunks):
        w = math.exp(-qh)
        v = pi
        out = w * v
        mass = w
        n = 0
        while 1.0 - mass > chunk_tol:
            n += 1
            v = PT @ v
            w *= qh / n
            out += w * v
            mass += w
            if n > 10_000:
                raise RuntimeError("uniformization failed to converge")
        pi = out / out.sum()
    return pi


def stationary_in_sector(gen: GeneratorMatrix, n: int) -> np.ndarray:
    """Stationary law of the sector with ``n`` holes, as a full-length vector."""
    states = gen.sector(n)
    if states.size == 0:
        raise ParameterError(f"sector with {n} holes is empty for S={gen.S}")
    pi = np.zeros(gen.n_states)
    if states.size == 1:
        pi[states[0]] = 1.0
        return pi
    Qs = gen.Q[states][:, states]
    n_comp, labels = connected_components(Qs, directed=True, connection="strong")
    if n_comp > 1:
        sizes = np.bincount(labels)
        raise ReducibleSectorError(
            f"sector n={n} splits into {n_comp} communicating classes of sizes "
            f"{sorted(sizes.tolist(), reverse=True)}; the stationary law is not unique "
            "(typically beta = eps = 0 conserves the vee count)"
        )
    QT = Qs.T.tocsr()
    scale = max(1.0, float(abs(Qs.diagonal()).max()))
    if states.size <= DIRECT_SOLVE_MAX:
        # pin the last state's weight to 1 and drop its balance equation; an
        # all-ones normalization row would fill in the sparse LU
        QTc = QT.tocsc()
        x = np.ones(states.size)
        x[:-1] = spsolve(QTc[:-1, :-1], -QTc[:-1, -1].toarray().ravel())
    else:
        x = _power_stationary(QT, scale)
    x = np.clip(x, 0.0, None)
    x /= x.sum()
    res = np.abs(QT @ x).max()
    if res > 1e-10 * scale:
        raise RuntimeError(f"stationary solve residual {res:.3e} too large")
    pi[states] = x
    return pi


def _power_stationary(QT, scale, max_iter: int = 2_000_000) -> np.ndarray:
    """Stationary vector of an irreducible generator (given transposed) by
    power iteration on its uniformized chain. The uniformization rate exceeds
    every exit rate so each state keeps a self-loop and the chain is aperiodic."""
    n = QT.shape[0]
    q = 1.05 * scale
    PT = (sp.identity(n, format="csr") + QT / q).tocsr()
    x = np.full(n, 1.0 / n)
    for i in range(max_iter):
        x = PT @ x
        if i % 100 == 99 and np.abs(QT @ x).max() <= 1e-13 * scale:
            return x
    raise RuntimeError("power iteration for the stationary law did not converge")


def stationary_mixture(gen: GeneratorMatrix, pi0) -> np.ndarray:
    """Long-time law from ``pi0``: sector stationary laws weighted by the initial sector mass."""
    pi0 = _check_distribution(pi0, gen.n_states)
    out = np.zeros(gen.n_states)
    for n in range(gen.S + 3):
        w = pi0[gen.holes == n].sum()
        if w > 0:
            out += w * stationary_in_sector(gen, n)
    return out


def marginals(pi, S: int, t: float = 0.0) -> MarginalProfile:
    pi = np.asarray(pi, dtype=float)
    d = state_digits(S)
    p_hole = np.array([pi[d[:, k] == HOLE].sum() for k in range(S + 2)])
    p_v = np.array([pi[d[:, k] == VEE].sum() for k in range(S + 2)])
    return MarginalProfile(t, p_hole, p_v)


def product_law(p_hole, p_v) -> np.ndarray:
    """Law of independent layers with the given per-layer hole and vee probabilities."""
    p_hole = np.asarray(p_hole, dtype=float)
    p_v = np.asarray(p_v, dtype=float)
    probs = np.stack([p_hole, 1.0 - p_hole - p_v, p_v], axis=1)  # (L, 3) by state code
    if np.any(probs < -1e-15):
        raise ParameterError("per-layer probabilities must be nonnegative")
    probs = np.clip(probs, 0.0, None)
    d = state_digits(p_hole.size - 2)
    return np.prod(probs[np.arange(p_hole.size), d], axis=1)


def point_mass(values) -> np.ndarray:
    S = len(values) - 2
    pi = np.zeros(3 ** (S + 2))
    pi[encode(values)] = 1.0
    return pi
