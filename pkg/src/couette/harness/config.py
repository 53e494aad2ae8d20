"""Experiment configuration: one JSON document, CLI overrides on top."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..lattice import ParameterError, Params
from ..moments import stability_bound

EPS_RULES = ("fixed", "K-scaling", "custom")
METHODS = ("kmc", "moments", "stationary", "oracle")


class ConfigError(ValueError):
    pass


@dataclass
class RunControls:
    t_burn: float = 200.0
    t_measure: float = 2000.0
    replicas: int = 8
    seed: int = 0
    n_batches: int = 20
    split: float = 0.5
    dt: Optional[float] = None  # None: half the RK4 stability bound, capped at 0.05
    t_end: float = 1000.0
    samples: int = 10
    workers: int = 1


@dataclass
class SweepSpec:
    S: list = field(default_factory=lambda: [64, 128, 256])
    K: list = field(default_factory=lambda: [0.5, 2.0, 8.0])
    eps_rule: str = "K-scaling"
    exponent: float = 2.0  # custom rule: eps = lam/2 * K^2 * S^-exponent
    u: list = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 10)])


@dataclass
class CompareSpec:
    methods: list = field(default_factory=lambda: ["moments", "stationary"])
    tol_abs: float = 1e-8
    z_max: float = 3.0


@dataclass
class ExperimentConfig:
    params: Params = field(default_factory=Params)
    run: RunControls = field(default_factory=RunControls)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    compare: CompareSpec = field(default_factory=CompareSpec)
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        r = self.run
        if r.replicas < 1:
            raise ConfigError(f"run.replicas must be >= 1, got {r.replicas}")
        if r.t_burn < 0 or r.t_measure < 0 or r.t_end < 0:
            raise ConfigError("run times must be >= 0")
        if r.n_batches < 2:
            raise ConfigError("run.n_batches must be >= 2")
        if r.workers < 1:
            raise ConfigError("run.workers must be >= 1")
        if r.samples < 1:
            raise ConfigError("run.samples must be >= 1")
        if not 0 <= r.split <= 1:
            raise ConfigError("run.split must lie in [0, 1]")
        if r.dt is not None and not r.dt > 0:
            raise ConfigError("run.dt must be > 0")
        s = self.sweep
        if s.eps_rule not in EPS_RULES:
            raise ConfigError(f"sweep.eps_rule must be one of {EPS_RULES}, got {s.eps_rule!r}")
        if not s.S or any(int(v) != v or v < 1 for v in s.S):
            raise ConfigError("sweep.S must be a nonempty list of positive integers")
        if s.eps_rule != "fixed" and (not s.K or any(not k > 0 for k in s.K)):
            raise ConfigError("sweep.K must be a nonempty list of positive numbers")
        if any(not 0 < u < 1 for u in s.u):
            raise ConfigError("sweep.u entries must lie in (0, 1)")
        c = self.compare
        bad = [m for m in c.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown compare methods {bad}; choose from {METHODS}")
        if len(set(c.methods)) < 2:
            raise ConfigError("compare needs at least two distinct methods")
        if c.tol_abs < 0 or c.z_max < 0:
            raise ConfigError("compare tolerances must be >= 0")
        return self

    def resolved_dt(self) -> float:
        if self.run.dt is not None:
            return self.run.dt
        return min(0.05, 0.5 * stability_bound(self.params))

    def to_dict(self) -> dict:
        run = asdict(self.run)
        run["dt"] = self.resolved_dt()
        return {
            "params": self.params.to_dict(),
            "run": run,
            "sweep": asdict(self.sweep),
            "compare": asdict(self.compare),
            "out": self.out,
        }


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**data)


def from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - {"params", "run", "sweep", "compare", "out"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        params = Params.from_dict(data.get("params") or {})
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"invalid params: {exc}") from exc
    try:
        cfg = ExperimentConfig(
            params=params,
            run=_section(RunControls, data.get("run"), "run"),
            sweep=_section(SweepSpec, data.get("sweep"), "sweep"),
            compare=_section(CompareSpec, data.get("compare"), "compare"),
            out=str(data.get("out", "out")),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``section.key=value`` to a raw config dict; ``value`` is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {path!r}: {key!r} is not a section")
    node[keys[-1]] = value


def load(
    path: Optional[str] = None,
    overrides: tuple = (),
    seed: Optional[int] = None,
    out: Optional[str] = None,
    workers: Optional[int] = None,
) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    for assignment in overrides:
        apply_override(data, assignment)
    if seed is not None:
        data.setdefault("run", {})["seed"] = seed
    if workers is not None:
        data.setdefault("run", {})["workers"] = workers
    if out is not None:
        data["out"] = out
    return from_dict(data)
