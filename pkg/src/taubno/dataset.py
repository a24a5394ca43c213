"""Training data: parameter and seed sampling, batch simulation, splits, storage.

Layout of a dataset directory::

    manifest.json            ids, splits, lambda, seed names, hashes (no timestamps)
    provenance.json          timestamps, argv, versions
    connectome/              copy of the connectome the data were simulated on
    samples/<id>/traj.csv    times header + one row per region (soluble N)
    samples/<id>/meta.json   lambda, seed spec, split, solver counters
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .connectome import Connectome, load_connectome, save_connectome
from .kinetics import KineticParams, KineticsError, LambdaVector, seed_equilibrium
from .rk import StepSizeUnderflow
from .solver import EdgeBVPError, Trajectory, load_trajectory, save_trajectory, simulate
from .synthetic import default_seed_library

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DATA_KEYS = ("kinetics.", "ranges.", "sim.", "solver.", "data.")


class DatasetError(RuntimeError):
    pass


class HashMismatch(DatasetError):
    pass


@dataclass(frozen=True)
class SeedSpec:
    name: str
    regions: tuple
    intensities: tuple
    total_mass: float = 1.0

    def __post_init__(self):
        regions = tuple(int(r) for r in self.regions)
        intensities = tuple(float(w) for w in self.intensities)
        if not regions:
            raise ValueError(f"seed {self.name!r}: no regions")
        if len(set(regions)) != len(regions):
            raise ValueError(f"seed {self.name!r}: duplicate regions")
        if len(intensities) != len(regions):
            raise ValueError(f"seed {self.name!r}: {len(intensities)} intensities for "
                             f"{len(regions)} regions")
        if any(w <= 0 for w in intensities) or abs(sum(intensities) - 1.0) > 1e-9:
            raise ValueError(f"seed {self.name!r}: intensities must be positive and sum to 1")
        if self.total_mass < 0:
            raise ValueError(f"seed {self.name!r}: total_mass must be >= 0")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "intensities", intensities)
        object.__setattr__(self, "total_mass", float(self.total_mass))

    def to_dict(self):
        d = asdict(self)
        d["regions"], d["intensities"] = list(self.regions), list(self.intensities)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["regions"], d["intensities"], d.get("total_mass", 1.0))


def load_seed_library(path, n_regions: int | None = None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"seed library not found: {path}")
    lib = [SeedSpec.from_dict(d) for d in json.loads(path.read_text())]
    if n_regions is not None:
        for s in lib:
            if max(s.regions) >= n_regions or min(s.regions) < 0:
                raise ValueError(f"seed {s.name!r}: region index outside [0, {n_regions})")
    return lib


def resolve_seed_library(config: RunConfig, c: Connectome):
    if config["sim.seeds"]:
        return load_seed_library(config["sim.seeds"], c.n_regions)
    return [SeedSpec.from_dict(d) for d in default_seed_library(c)]


# sampling

def _uniform(rng, lo, hi):
    return lo if lo == hi else rng.uniform(lo, hi)


def sample_lambda(rng, ranges: dict) -> LambdaVector:
    """Draw one parameter vector.

    lambda_f follows p_low U[lo, split] + (1 - p_low) U[split, hi]; the other
    four entries are uniform on their ranges. ``ranges`` uses the keys of the
    ``ranges.`` config section.
    """
    lo, hi = ranges["lambda_f"]
    split = min(max(ranges.get("lambda_f_split", 1e-3), lo), hi)
    p_low = ranges.get("lambda_f_p_low", 0.9)
    for key in ("lambda_f", "lambda_gamma", "lambda_delta", "lambda_epsilon", "lambda_mu"):
        if ranges[key][0] > ranges[key][1]:
            raise ValueError(f"{key}: lower bound exceeds upper bound")
    low_branch = rng.random() < p_low
    lam_f = _uniform(rng, lo, split) if low_branch else _uniform(rng, split, hi)
    rest = [_uniform(rng, *ranges[k]) for k in
            ("lambda_gamma", "lambda_delta", "lambda_epsilon", "lambda_mu")]
    return LambdaVector(lam_f, *rest)


def lambda_f_cdf(x, lo=0.0, hi=1e-2, split=1e-3, p_low=0.9):
    """Analytic CDF of the lambda_f mixture."""
    x = np.asarray(x, dtype=float)
    low = np.clip((x - lo) / (split - lo), 0.0, 1.0) if split > lo else (x >= lo).astype(float)
    high = np.clip((x - split) / (hi - split), 0.0, 1.0) if hi > split else (x >= hi).astype(float)
    return p_low * low + (1.0 - p_low) * high


def sample_seed(rng, library) -> SeedSpec:
    if not library:
        raise ValueError("seed library is empty")
    return library[int(rng.integers(len(library)))]


def build_initial_condition(seed: SeedSpec, k: KineticParams, n_regions: int) -> np.ndarray:
    """Soluble N(0): seed_equilibrium of each seed region's share of the mass, 0 elsewhere."""
    n0 = np.zeros(n_regions)
    for r, w in zip(seed.regions, seed.intensities):
        n0[r] = seed_equilibrium(w * seed.total_mass, k)[0]
    return n0


def assign_splits(n: int, rng) -> list:
    """80/10/10 over a shuffled index: floor for val and test, remainder to train."""
    n_val = n_test = n // 10
    perm = rng.permutation(n)
    labels = ["train"] * n
    for i in perm[:n_test]:
        labels[i] = "test"
    for i in perm[n_test:n_test + n_val]:
        labels[i] = "val"
    return labels


# generation

@dataclass
class SampleRecord:
    id: int
    lambda_: LambdaVector
    seed: SeedSpec
    trajectory: Trajectory
    split: str
    attempts: int = 1


def _simulate_sample(task):
    """Worker: derive the sample's stream, draw inputs, simulate, retry on failure."""
    sample_id, master_seed, c, config_values, library, max_retries = task
    config = RunConfig(config_values)
    rng = np.random.default_rng(master_seed ^ sample_id)
    ranges = config.section("ranges")
    base = config.kinetics()
    tol = config.tolerances()
    lengths = np.loadtxt(config["sim.lengths"], delimiter=",") if config["sim.lengths"] else None
    errors = []
    for attempt in range(max_retries + 1):
        lv = sample_lambda(rng, ranges)
        seed = sample_seed(rng, library)
        try:
            traj = simulate(c, lv, seed.regions, seed.intensities, seed.total_mass,
                            horizon=config["sim.horizon"], n_steps=int(config["sim.n_steps"]),
                            base=base, lengths=lengths, tol=tol)
        except (EdgeBVPError, KineticsError, StepSizeUnderflow, RuntimeError, ValueError) as exc:
            errors.append(f"attempt {attempt}: lambda={lv.as_array().tolist()} seed={seed.name}: "
                          f"{type(exc).__name__}: {exc}")
            continue
        return sample_id, lv, seed, traj, attempt + 1, errors
    raise DatasetError(f"sample {sample_id} failed after {max_retries + 1} attempts: "
                       + "; ".join(errors))


def default_jobs():
    env = os.environ.get("TAUBNO_JOBS")
    if env:
        return max(1, int(env))
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def generate_dataset(n_samples: int, c: Connectome, config: RunConfig, master_seed: int,
                     out_dir, jobs: int | None = None, library=None) -> dict:
    """Simulate ``n_samples`` trajectories into ``out_dir``; returns the manifest.

    Each sample uses its own stream seeded with master_seed XOR id, so the
    output does not depend on ``jobs``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    library = library if library is not None else resolve_seed_library(config, c)
    max_retries = int(config["data.max_retries"])
    tasks = [(i, master_seed, c, config.to_dict(), library, max_retries) for i in range(n_samples)]
    jobs = jobs or default_jobs()
    if jobs > 1 and n_samples > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, n_samples)) as pool:
            results = list(pool.map(_simulate_sample, tasks, chunksize=1))
    else:
        results = [_simulate_sample(t) for t in tasks]
    splits = assign_splits(n_samples, np.random.default_rng(master_seed))
    data_keys = [k for k in config.values if k.startswith(DATA_KEYS)]
    samples = []
    for (sid, lv, seed, traj, attempts, errors), split in zip(results, splits):
        for e in errors:
            log.warning("sample %d resampled after failure: %s", sid, e)
        sdir = out_dir / "samples" / f"{sid:05d}"
        sdir.mkdir(parents=True, exist_ok=True)
        save_trajectory(traj, sdir / "traj.csv", meta_path=sdir / "meta.json", extra_meta={
            "id": sid, "split": split, "seed": seed.to_dict(), "attempts": attempts,
            "failures": errors, "ordering_hash": c.ordering_hash,
        })
        samples.append({"id": sid, "split": split, "lambda": lv.as_array().tolist(),
                        "seed_name": seed.name})
    manifest = {
        "samples": samples,
        "master_seed": int(master_seed),
        "config_hash": config.hash(data_keys),
        "ordering_hash": c.ordering_hash,
        "n_regions": c.n_regions,
        "horizon": float(config["sim.horizon"]),
        "n_steps": int(config["sim.n_steps"]),
        "species": "soluble",
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    save_connectome(c, out_dir / "connectome")
    return manifest


# loading

@dataclass
class SampleSet:
    """Arrays for a dataset directory: u0 (N, V), lam (N, 5), target (N, V, T)."""

    ids: np.ndarray
    splits: np.ndarray
    u0: np.ndarray
    lam: np.ndarray
    target: np.ndarray
    times: np.ndarray
    manifest: dict

    def subset(self, split: str) -> "SampleSet":
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        m = self.splits == split
        return SampleSet(self.ids[m], self.splits[m], self.u0[m], self.lam[m], self.target[m],
                         self.times, self.manifest)

    def __len__(self):
        return len(self.ids)


def load_dataset(data_dir, connectome: Connectome | None = None) -> SampleSet:
    data_dir = Path(data_dir)
    mpath = data_dir / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"dataset manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text())
    if connectome is not None and connectome.ordering_hash != manifest["ordering_hash"]:
        raise HashMismatch("dataset and connectome region orderings differ (ordering_hash)")
    ids, splits, u0, lam, target, times = [], [], [], [], [], None
    for s in manifest["samples"]:
        sdir = data_dir / "samples" / f"{s['id']:05d}"
        traj = load_trajectory(sdir / "traj.csv", meta_path=sdir / "meta.json")
        times = traj.times
        ids.append(s["id"])
        splits.append(s["split"])
        u0.append(traj.values[:, 0])
        lam.append(traj.lambda_.as_array())
        target.append(traj.values[:, 1:])
    return SampleSet(np.array(ids), np.array(splits), np.array(u0), np.array(lam),
                     np.array(target), times, manifest)


def dataset_connectome(data_dir) -> Connectome:
    return load_connectome(Path(data_dir) / "connectome")
