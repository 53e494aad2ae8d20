"""Event-driven simulation of the strip process.

Five event kinds drive the dynamics:

* vertical swap of sites ``(k, x)`` and ``(k+1, x)`` at rate ``lam``;
* horizontal flow ``(V, hole) -> (hole, V)`` from ``(k, x)`` to ``(k, x+1)``
  at rate ``lam1``;
* bottom flip ``V -> 0`` on layer 0 and top flip ``0 -> V`` on layer S+1,
  both at rate ``beta``;
* perturbation ``0 <-> V`` of any occupied site at rate ``eps``.

Swapping two equal values is the identity, so those swaps are not counted
as enabled events. ``run(..., include_noop=True)`` keeps them for
cross-checking.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .lattice import Configuration, ParameterError, Params, Velocity, init_product, total_particles

HOLE, ZERO, VEE = int(Velocity.HOLE), int(Velocity.ZERO), int(Velocity.VEE)


class AbsorbingStateError(RuntimeError):
    """No event is enabled: the configuration is frozen."""


class EventKind(IntEnum):
    VERTICAL_SWAP = _kernels.VSWAP
    HORIZONTAL_FLOW = _kernels.FLOW
    BOTTOM_FLIP = _kernels.BOTTOM
    TOP_FLIP = _kernels.TOP
    PERTURB = _kernels.PERTURB


EVENT_NAMES = {
    EventKind.VERTICAL_SWAP: "vertical_swap",
    EventKind.HORIZONTAL_FLOW: "horizontal_flow",
    EventKind.BOTTOM_FLIP: "bottom_flip",
    EventKind.TOP_FLIP: "top_flip",
    EventKind.PERTURB: "perturb",
}


class Event(NamedTuple):
    kind: EventKind
    k: int
    x: int


def _check_shape(config: Configuration, params: Params):
    if config.shape != (params.n_layers, params.W):
        raise ParameterError(
            f"configuration shape {config.shape} does not match S={params.S}, W={params.W}"
        )


def kind_rates(params: Params) -> np.ndarray:
    return np.array([params.lam, params.lam1, params.beta, params.beta, params.eps])


def _enabled_sites(cells: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(k, x) index arrays of enabled events for each kind, in EventKind order."""
    L, W = cells.shape
    vswap = np.nonzero(cells[:-1] != cells[1:])
    if W >= 2:
        flow = np.nonzero((cells == VEE) & (np.roll(cells, -1, axis=1) == HOLE))
    else:
        flow = (np.empty(0, int), np.empty(0, int))
    bottom_x = np.nonzero(cells[0] == VEE)[0]
    top_x = np.nonzero(cells[-1] == ZERO)[0]
    perturb = np.nonzero(cells != HOLE)
    return [
        vswap,
        flow,
        (np.zeros_like(bottom_x), bottom_x),
        (np.full_like(top_x, L - 1), top_x),
        perturb,
    ]


def enabled_counts(config: Configuration) -> np.ndarray:
    return np.array([len(k) for k, _ in _enabled_sites(config.cells)])


def enabled_events(config: Configuration) -> list[Event]:
    out = []
    for kind, (ks, xs) in zip(EventKind, _enabled_sites(config.cells)):
        out.extend(Event(kind, int(k), int(x)) for k, x in zip(ks, xs))
    return out


def total_rate(config: Configuration, params: Params) -> float:
    _check_shape(config, params)
    return float(kind_rates(params) @ enabled_counts(config))


def apply_event(config: Configuration, event: Event) -> None:
    """Apply ``event`` to ``config`` in place.

    Raises ``ValueError`` for flows and flips whose enabling condition does
    not hold; a vertical swap of equal values is allowed and changes nothing.
    """
    cells = config.cells
    L, W = cells.shape
    kind, k, x = event
    x %= W
    if kind == EventKind.VERTICAL_SWAP:
        if not 0 <= k < L - 1:
            raise ValueError(f"vertical swap layer {k} out of range")
        cells[k, x], cells[k + 1, x] = cells[k + 1, x], cells[k, x]
    elif kind == EventKind.HORIZONTAL_FLOW:
        xr = (x + 1) % W
        if W < 2 or cells[k, x] != VEE or cells[k, xr] != HOLE:
            raise ValueError(f"flow not enabled at {(k, x)}")
        cells[k, x], cells[k, xr] = HOLE, VEE
    elif kind == EventKind.BOTTOM_FLIP:
        if k != 0 or cells[0, x] != VEE:
            raise ValueError(f"bottom flip not enabled at column {x}")
        cells[0, x] = ZERO
    elif kind == EventKind.TOP_FLIP:
        if k != L - 1 or cells[k, x] != ZERO:
            raise ValueError(f"top flip not enabled at column {x}")
        cells[k, x] = VEE
    elif kind == EventKind.PERTURB:
        if cells[k, x] == HOLE:
            raise ValueError(f"cannot perturb a hole at {(k, x)}")
        cells[k, x] = 3 - cells[k, x]
    else:
        raise ValueError(f"unknown event kind {kind!r}")


def choose_event(config: Configuration, params: Params, rng: np.random.Generator) -> tuple[Event, float]:
    """Draw the next event and waiting time without applying it."""
    _check_shape(config, params)
    sites = _enabled_sites(config.cells)
    weights = kind_rates(params) * np.array([len(k) for k, _ in sites])
    total = weights.sum()
    if total <= 0:
        raise AbsorbingStateError("total rate is zero")
    dt = rng.exponential(1.0 / total)
    kind = int(rng.choice(len(weights), p=weights / total))
    ks, xs = sites[kind]
    i = int(rng.integers(len(ks)))
    return Event(EventKind(kind), int(ks[i]), int(xs[i])), float(dt)


def step(config: Configuration, params: Params, rng: np.random.Generator) -> tuple[Event, float]:
    """Advance ``config`` by one event in place; returns the event and its waiting time."""
    event, dt = choose_event(config, params, rng)
    apply_event(config, event)
    return event, dt


@dataclass
class SimReport:
    params: Params
    t_burn: float
    t_measure: float
    seed: object
    events: dict
    batches: Optional[np.ndarray]  # (n_batches, S+2, 3) per-batch layer probabilities
    particles: int  # summed over replicas
    n_sites: int  # summed over replicas
    replicas: int = 1
    violations: int = 0
    absorbed: bool = False
    final: Optional[Configuration] = field(default=None, repr=False, compare=False)

    @property
    def measured(self) -> bool:
        return self.batches is not None and self.t_measure > 0

    @property
    def rho_hat(self) -> float:
        """Realized particle density of the simulated configurations."""
        return self.particles / self.n_sites

    @property
    def profile(self) -> np.ndarray:
        if not self.measured:
            raise ValueError("zero-duration measurement window: no averages")
        return self.batches.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        """Batch-means standard errors (approximate under autocorrelation)."""
        if not self.measured:
            raise ValueError("zero-duration measurement window: no averages")
        n = self.batches.shape[0]
        if n < 2:
            return np.full(self.batches.shape[1:], np.nan)
        return self.batches.std(axis=0, ddof=1) / np.sqrt(n)

    def to_dict(self) -> dict:
        out = {
            "params": self.params.to_dict(),
            "t_burn": self.t_burn,
            "t_measure": self.t_measure,
            "seed": self.seed,
            "replicas": self.replicas,
            "events": dict(self.events),
            "rho_hat": self.rho_hat,
            "absorbed": self.absorbed,
            "conservation_violations": self.violations,
            "measured": self.measured,
            "n_batches": 0 if self.batches is None else int(self.batches.shape[0]),
            "profile": [],
        }
        if self.measured:
            p, se = self.profile, self.se
            for k in range(p.shape[0]):
                out["profile"].append({
                    "k": k,
                    "p_hole": float(p[k, 0]),
                    "p_zero": float(p[k, 1]),
                    "p_v": float(p[k, 2]),
                    "se_hole": float(se[k, 0]),
                    "se_zero": float(se[k, 1]),
                    "se_v": float(se[k, 2]),
                })
        return out


def run(
    config: Configuration,
    params: Params,
    t_burn: float,
    t_measure: float,
    seed,
    n_batches: int = 20,
    include_noop: bool = False,
) -> SimReport:
    """Simulate from ``config`` (left untouched) and time-average layer marginals.

    The process runs to ``t_burn``, then layer histograms are integrated over
    ``[t_burn, t_burn + t_measure]`` split into ``n_batches`` equal batches.
    A frozen (absorbing) configuration keeps contributing its histogram.
    """
    _check_shape(config, params)
    if t_burn < 0 or t_measure < 0:
        raise ParameterError("t_burn and t_measure must be >= 0")
    if n_batches < 1:
        raise ParameterError("n_batches must be >= 1")
    grid = config.cells.copy()
    rng = np.random.default_rng(seed)
    if t_measure > 0:
        edges = t_burn + t_measure * np.arange(n_batches + 1) / n_batches
    else:
        edges = np.empty(0)
    acc, _, events, violations, absorbed, _ = _kernels.simulate(
        grid, kind_rates(params), rng, float(t_burn + t_measure), edges,
        np.empty(0), include_noop,
    )
    batches = None
    if t_measure > 0:
        batches = acc / (t_measure / n_batches * params.W)
    counts = {EVENT_NAMES[kind]: int(events[kind]) for kind in EventKind}
    if include_noop:
        counts["identity_swap"] = int(events[-1])
    return SimReport(
        params=params,
        t_burn=float(t_burn),
        t_measure=float(t_measure),
        seed=_jsonable_seed(seed),
        events=counts,
        batches=batches,
        particles=total_particles(config),
        n_sites=grid.size,
        violations=int(violations),
        absorbed=bool(absorbed),
        final=Configuration(grid),
    )


def snapshots(config: Configuration, params: Params, times: Sequence[float], seed) -> np.ndarray:
    """Layer histograms ``(len(times), S+2, 3)`` at increasing ``times``; ``config`` is untouched."""
    _check_shape(config, params)
    times = np.asarray(times, dtype=float)
    if times.size and (np.any(np.diff(times) < 0) or times[0] < 0):
        raise ParameterError("snapshot times must be nonnegative and nondecreasing")
    t_stop = float(times[-1]) if times.size else 0.0
    _, snaps, *_ = _kernels.simulate(
        config.cells.copy(), kind_rates(params), np.random.default_rng(seed), t_stop,
        np.empty(0), times, False,
    )
    return snaps


def merge_reports(reports: Sequence[SimReport]) -> SimReport:
    """Pool replica reports; batches are concatenated in the given order."""
    if not reports:
        raise ValueError("no reports to merge")
    first = reports[0]
    events: dict = {}
    for rep in reports:
        for key, n in rep.events.items():
            events[key] = events.get(key, 0) + n
    measured = all(rep.batches is not None for rep in reports)
    return SimReport(
        params=first.params,
        t_burn=first.t_burn,
        t_measure=first.t_measure,
        seed=first.seed if len(reports) == 1 else [rep.seed for rep in reports],
        events=events,
        batches=np.concatenate([rep.batches for rep in reports]) if measured else None,
        particles=sum(rep.particles for rep in reports),
        n_sites=sum(rep.n_sites for rep in reports),
        replicas=sum(rep.replicas for rep in reports),
        violations=sum(rep.violations for rep in reports),
        absorbed=any(rep.absorbed for rep in reports),
    )


def replica_seeds(seed: int, r: int) -> tuple[list[int], list[int]]:
    """(initial-configuration seed, dynamics seed) of replica ``r``."""
    return [seed, r, 0], [seed, r, 1]


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_replicas(
    params: Params,
    t_burn: float,
    t_measure: float,
    replicas: int,
    seed: int,
    n_batches: int = 20,
    split: float = 0.5,
    workers: int = 1,
    include_noop: bool = False,
) -> SimReport:
    """Independent runs from product initial configurations, merged in replica order."""
    if replicas < 1:
        raise ParameterError(f"replicas must be >= 1, got {replicas}")

    def one(r):
        init_seed, dyn_seed = replica_seeds(seed, r)
        config = init_product(params, init_seed, split=split)
        return run(config, params, t_burn, t_measure, dyn_seed, n_batches, include_noop)

    return merge_reports(_map(one, range(replicas), workers))


def ensemble_snapshots(
    params: Params,
    times: Sequence[float],
    replicas: int,
    seed: int,
    split: float = 0.5,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean and standard error of layer probabilities at ``times``.

    Both arrays have shape ``(len(times), S+2, 3)``.
    """
    if replicas < 2:
        raise ParameterError("need at least two replicas for standard errors")

    def one(r):
        init_seed, dyn_seed = replica_seeds(seed, r)
        config = init_product(params, init_seed, split=split)
        return snapshots(config, params, times, dyn_seed) / params.W

    samples = np.stack(_map(one, range(replicas), workers))
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(replicas)


def _jsonable_seed(seed):
    if isinstance(seed, (list, tuple, np.ndarray)):
        return [int(s) for s in seed]
    return None if seed is None else int(seed)
