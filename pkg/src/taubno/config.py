"""Run configuration: flat dotted keys, defaults for everything, canonical hash."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .kinetics import KineticParams
from .solver import SolverTolerances


class ConfigError(ValueError):
    pass


DEFAULTS = {
    # kinetic base constants (the lambda vector overrides its five fields)
    "kinetics.beta": 1.0,
    "kinetics.gamma2": 0.0,
    "kinetics.phi": 0.01,
    "kinetics.f_frac": 0.0,
    "kinetics.delta": 0.1,
    "kinetics.epsilon": 0.1,
    "kinetics.diffusivity": 1.0,
    # lambda sampling; lambda_f is a two-component uniform mixture split at lambda_f_split
    "ranges.lambda_f": [0.0, 1e-2],
    "ranges.lambda_f_split": 1e-3,
    "ranges.lambda_f_p_low": 0.9,
    "ranges.lambda_gamma": [1e-3, 8e-3],
    "ranges.lambda_delta": [10.0, 100.0],
    "ranges.lambda_epsilon": [10.0, 100.0],
    "ranges.lambda_mu": [0.2, 3.2],
    # simulation
    "sim.horizon": 12.0,
    "sim.n_steps": 48,
    "sim.total_mass": 1.0,
    "sim.seeds": None,
    "sim.lengths": None,
    "solver.edge_rtol": 1e-8,
    "solver.edge_atol": 1e-10,
    "solver.bvp_rtol": 1e-8,
    "solver.max_iter": 60,
    "solver.node_rtol": 1e-6,
    "solver.node_atol": 1e-9,
    "solver.min_dt": 1e-12,
    # dataset
    "data.n_samples": 200,
    "data.seed": 42,
    "data.max_retries": 3,
    # model
    "model.hidden": 64,
    "model.modes": 16,
    "model.layers_fo": 2,
    "model.layers_qo": 2,
    "model.layers_dgo": 2,
    "model.kernel_width": 3,
    "model.ablations": [],
    # training
    "train.epochs": 1000,
    "train.batch_size": 16,
    "train.lr": 8e-4,
    "train.lr_min": 2e-6,
    "train.weight_decay": 0.01,
    "train.seed": 0,
    # plumbing
    "connectome": None,
    "jobs": None,
}

_BARE_KINETIC = {k.split(".", 1)[1]: k for k in DEFAULTS if k.startswith("kinetics.")}


def canonical_key(key: str) -> str:
    key = key.replace("-", "_")
    key = _BARE_KINETIC.get(key, key)
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


class RunConfig:
    """Flat mapping of dotted keys; unspecified keys take their defaults."""

    def __init__(self, values: dict | None = None):
        self.values = copy.deepcopy(DEFAULTS)
        self.update(values or {})

    def update(self, values: dict):
        for key, val in _flatten(values).items():
            if val is None and canonical_key(key) not in ("sim.seeds", "sim.lengths",
                                                          "connectome", "jobs"):
                continue
            self.values[canonical_key(key)] = val
        self._validate()
        return self

    def _validate(self):
        for key in DEFAULTS:
            if key.startswith("ranges.lambda_") and isinstance(DEFAULTS[key], list):
                lo, hi = self.values[key]
                if lo > hi:
                    raise ConfigError(f"{key}: lower bound {lo} exceeds upper bound {hi}")
                if lo < 0:
                    raise ConfigError(f"{key}: lambda ranges must be non-negative")

    def __getitem__(self, key):
        return self.values[canonical_key(key)]

    def get(self, key, default=None):
        return self.values.get(canonical_key(key), default)

    def section(self, prefix: str) -> dict:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def kinetics(self) -> KineticParams:
        return KineticParams(**self.section("kinetics"))

    def tolerances(self) -> SolverTolerances:
        d = self.section("solver")
        d["max_iter"] = int(d["max_iter"])
        return SolverTolerances(**d)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def hash(self, keys=None) -> str:
        """sha256 of the canonical JSON of the config (or of a subset of keys)."""
        d = self.values if keys is None else {k: self.values[k] for k in keys}
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            return cls(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.values, indent=1, sort_keys=True))


def _flatten(d, prefix=""):
    """Accept nested sections too: {"train": {"epochs": 5}} -> {"train.epochs": 5}."""
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out
