"""Strip geometry, site states and translation-invariant initial ensembles.

The strip has layers ``0 .. S+1`` stacked vertically and ``W`` columns that
wrap around periodically, so the infinite horizontal direction is replaced
by a torus of circumference ``W``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np


class ParameterError(ValueError):
    """Raised for invalid model parameters or mismatched dimensions."""


class Velocity(IntEnum):
    HOLE = 0
    ZERO = 1
    VEE = 2


_CHARS = {Velocity.HOLE: ".", Velocity.ZERO: "0", Velocity.VEE: "V"}
_FROM_CHAR = {c: int(v) for v, c in _CHARS.items()}

# JSON key -> attribute name
_PARAM_KEYS = {
    "S": "S",
    "W": "W",
    "lambda": "lam",
    "lambda1": "lam1",
    "beta": "beta",
    "epsilon": "eps",
    "rho": "rho",
}


@dataclass(frozen=True)
class Params:
    """Model rates and geometry.

    ``lam`` is the vertical exchange rate, ``lam1`` the horizontal flow rate,
    ``beta`` the boundary flip rate, ``eps`` the random perturbation rate and
    ``rho`` the particle density of the initial ensemble.
    """

    S: int = 8
    W: int = 128
    lam: float = 1.0
    lam1: float = 1.0
    beta: float = 1.0
    eps: float = 0.0
    rho: float = 0.5

    def __post_init__(self):
        if int(self.S) != self.S or self.S < 0:
            raise ParameterError(f"S must be a nonnegative integer, got {self.S!r}")
        if int(self.W) != self.W or self.W < 1:
            raise ParameterError(f"W must be a positive integer, got {self.W!r}")
        for name in ("lam", "lam1", "beta", "eps"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ParameterError(f"{name} must be finite and >= 0, got {value!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho!r}")
        object.__setattr__(self, "S", int(self.S))
        object.__setattr__(self, "W", int(self.W))

    @property
    def n_layers(self) -> int:
        return self.S + 2

    def replace(self, **changes) -> "Params":
        values = asdict(self)
        values.update(changes)
        return Params(**values)

    def precondition_warnings(self) -> list[str]:
        """Human-readable notes on parameters outside the range where the closed forms apply."""
        notes = []
        for name, label in (("lam", "lambda"), ("lam1", "lambda1"), ("beta", "beta")):
            if getattr(self, name) <= 0:
                notes.append(f"{label} = 0: closed-form results assume {label} > 0")
        if self.lam1 > 0 and self.W < 2:
            notes.append("lambda1 > 0 with W < 2: horizontal flow is disabled")
        return notes

    def to_dict(self) -> dict:
        return {key: getattr(self, attr) for key, attr in _PARAM_KEYS.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "Params":
        unknown = set(data) - set(_PARAM_KEYS)
        if unknown:
            raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**{_PARAM_KEYS[k]: v for k, v in data.items()})


class Configuration:
    """An ``(S+2) x W`` grid of site states, periodic in the column index."""

    __slots__ = ("_cells",)

    def __init__(self, cells):
        cells = np.array(cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape[0] < 2 or cells.shape[1] < 1:
            raise ParameterError(f"cells must be a 2-D array with >= 2 layers, got shape {cells.shape}")
        if cells.min() < 0 or cells.max() > 2:
            raise ParameterError("cells may only hold HOLE, ZERO or VEE")
        self._cells = cells

    @property
    def cells(self) -> np.ndarray:
        # a view: contents are mutable, shape is not
        return self._cells

    @property
    def S(self) -> int:
        return self._cells.shape[0] - 2

    @property
    def W(self) -> int:
        return self._cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._cells.shape

    def __getitem__(self, site):
        k, x = site
        return Velocity(self._cells[k, x % self.W])

    def __setitem__(self, site, value):
        k, x = site
        self._cells[k, x % self.W] = int(Velocity(value))

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._cells, other._cells))

    def copy(self) -> "Configuration":
        return Configuration(self._cells.copy())

    @classmethod
    def filled(cls, S: int, W: int, value: Velocity = Velocity.HOLE) -> "Configuration":
        return cls(np.full((S + 2, W), int(value), dtype=np.int8))

    def to_text(self) -> str:
        lines = [f"{self.S} {self.W}"]
        table = np.array([_CHARS[Velocity(i)] for i in range(3)])
        for row in self._cells:
            lines.append("".join(table[row]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Configuration":
        lines = text.splitlines()
        if not lines:
            raise ParameterError("empty configuration text")
        try:
            S, W = (int(v) for v in lines[0].split())
        except ValueError as exc:
            raise ParameterError(f"bad header line {lines[0]!r}") from exc
        rows = lines[1:]
        if len(rows) != S + 2:
            raise ParameterError(f"expected {S + 2} rows, got {len(rows)}")
        cells = np.empty((S + 2, W), dtype=np.int8)
        for k, row in enumerate(rows):
            if len(row) != W:
                raise ParameterError(f"row {k} has {len(row)} characters, expected {W}")
            try:
                cells[k] = [_FROM_CHAR[c] for c in row]
            except KeyError as exc:
                raise ParameterError(f"invalid site character {exc.args[0]!r} in row {k}") from exc
        return cls(cells)

    def __repr__(self):
        return f"Configuration(S={self.S}, W={self.W}, particles={total_particles(self)})"


def init_product(params: Params, seed, split: float = 0.5) -> Configuration:
    """Sample an i.i.d. product configuration.

    Each site is a hole with probability ``1 - rho``; an occupied site is
    ``VEE`` with probability ``split`` and ``ZERO`` otherwise. ``seed`` is
    anything accepted by :func:`numpy.random.default_rng`.
    """
    if not 0.0 <= split <= 1.0:
        raise ParameterError(f"split must lie in [0, 1], got {split!r}")
    rng = np.random.default_rng(seed)
    rho = params.rho
    probs = np.array([1.0 - rho, rho * (1.0 - split), rho * split])
    u = rng.random((params.n_layers, params.W))
    # side="right" keeps zero-probability states unreachable since u in [0, 1)
    cells = np.searchsorted(np.cumsum(probs)[:-1], u, side="right").astype(np.int8)
    return Configuration(cells)


def total_particles(config: Configuration) -> int:
    return int(np.count_nonzero(config.cells != Velocity.HOLE))


def layer_histogram(config: Configuration) -> np.ndarray:
    """Per-layer counts, shape ``(S+2, 3)`` ordered ``(hole, zero, vee)``."""
    cells = config.cells
    return np.stack([(cells == v).sum(axis=1) for v in Velocity], axis=1)


def column_histogram(configs: Sequence[Configuration]) -> np.ndarray:
    """Counts of each state per column summed over an ensemble, shape ``(W, 3)``."""
    total = None
    for config in configs:
        counts = np.stack([(config.cells == v).sum(axis=0) for v in Velocity], axis=1)
        total = counts if total is None else total + counts
    return total
