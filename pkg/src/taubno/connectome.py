"""Directed structural connectome: loading, validation, surrogate graphs, coarse atlas."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConnectomeError(ValueError):
    pass


class ConnectomeFormatError(ConnectomeError):
    pass


class NegativeWeightError(ConnectomeError):
    pass


class NonPositiveVolumeError(ConnectomeError):
    pass


class DimensionMismatchError(ConnectomeError):
    pass


def ordering_hash(region_names) -> str:
    """sha256 over the newline-joined region names, in atlas order."""
    return hashlib.sha256("\n".join(region_names).encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class Connectome:
    adjacency: np.ndarray
    volumes: np.ndarray
    region_names: tuple
    coarse_map: np.ndarray
    n_coarse: int

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=float)
        vol = np.array(self.volumes, dtype=float)
        cmap = np.array(self.coarse_map, dtype=int)
        names = tuple(str(s) for s in self.region_names)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DimensionMismatchError(f"adjacency must be square, got shape {adj.shape}")
        n = adj.shape[0]
        if n == 0:
            raise DimensionMismatchError("connectome has no regions")
        for label, size in (("volumes", vol.size), ("region_names", len(names)),
                            ("coarse_map", cmap.size)):
            if size != n:
                raise DimensionMismatchError(f"{label} has length {size}, expected {n}")
        if not np.all(np.isfinite(adj)):
            raise ConnectomeFormatError("adjacency contains non-finite entries")
        neg = np.argwhere(adj < 0)
        if len(neg):
            i, j = neg[0]
            raise NegativeWeightError(f"negative weight at ({i},{j})")
        if np.any(np.diag(adj) != 0):
            i = int(np.flatnonzero(np.diag(adj))[0])
            raise ConnectomeFormatError(f"nonzero self-connection at ({i},{i})")
        bad = np.flatnonzero(~(vol > 0))
        if len(bad):
            raise NonPositiveVolumeError(f"nonpositive volume {vol[bad[0]]} at region {bad[0]}")
        if self.n_coarse < 1 or cmap.min() < 0 or cmap.max() >= self.n_coarse:
            raise ConnectomeFormatError(f"coarse_map entries must lie in [0, {self.n_coarse})")
        if len(np.unique(cmap)) != self.n_coarse:
            raise ConnectomeFormatError("coarse_map is not surjective onto the coarse atlas")
        adj.setflags(write=False)
        vol.setflags(write=False)
        cmap.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "volumes", vol)
        object.__setattr__(self, "coarse_map", cmap)
        object.__setattr__(self, "region_names", names)
        object.__setattr__(self, "n_coarse", int(self.n_coarse))

    @property
    def n_regions(self) -> int:
        return self.adjacency.shape[0]

    @property
    def ordering_hash(self) -> str:
        return ordering_hash(self.region_names)

    def edges(self):
        """(sources, targets, weights) of the nonzero directed edges, row-major order."""
        src, dst = np.nonzero(self.adjacency)
        return src, dst, self.adjacency[src, dst]

    def coarse_volumes(self) -> np.ndarray:
        return np.bincount(self.coarse_map, weights=self.volumes, minlength=self.n_coarse)

    def metadata(self) -> dict:
        return {
            "n_regions": self.n_regions,
            "volumes": self.volumes.tolist(),
            "region_names": list(self.region_names),
            "coarse_map": self.coarse_map.tolist(),
            "n_coarse": self.n_coarse,
            "ordering_hash": self.ordering_hash,
        }


def _resolve_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "connectome.csv"
    return path, path.with_name(path.stem + ".meta.json")


def load_connectome(path) -> Connectome:
    """Read ``connectome.csv`` and its sibling ``connectome.meta.json``.

    ``path`` may be the CSV itself or the directory holding it.
    """
    csv_path, meta_path = _resolve_paths(path)
    if not csv_path.exists():
        raise FileNotFoundError(f"adjacency file not found: {csv_path}")
    if not meta_path.exists():
        raise FileNotFoundError(f"metadata file not found: {meta_path}")
    rows = []
    for lineno, line in enumerate(csv_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as exc:
            raise ConnectomeFormatError(f"{csv_path}:{lineno}: {exc}") from None
    if len({len(r) for r in rows}) > 1:
        raise DimensionMismatchError(f"{csv_path}: rows have differing lengths")
    adjacency = np.array(rows, dtype=float)
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConnectomeFormatError(f"{meta_path}: {exc}") from None
    missing = {"n_regions", "volumes", "region_names", "coarse_map", "n_coarse"} - set(meta)
    if missing:
        raise ConnectomeFormatError(f"{meta_path}: missing keys {sorted(missing)}")
    if adjacency.shape != (meta["n_regions"], meta["n_regions"]):
        raise DimensionMismatchError(
            f"adjacency shape {adjacency.shape} does not match n_regions={meta['n_regions']}")
    c = Connectome(adjacency, meta["volumes"], meta["region_names"], meta["coarse_map"],
                   meta["n_coarse"])
    if "ordering_hash" in meta and meta["ordering_hash"] != c.ordering_hash:
        raise ConnectomeFormatError(f"{meta_path}: ordering_hash does not match region_names")
    return c


def save_connectome(c: Connectome, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "connectome.csv"
    np.savetxt(csv_path, c.adjacency, delimiter=",", fmt="%.17g")
    (directory / "connectome.meta.json").write_text(json.dumps(c.metadata(), indent=1))
    return csv_path


class ZeroDegreePolicy(enum.Enum):
    ZERO = "zero"          # reciprocal of a zero degree taken as 0
    EPSILON = "epsilon"    # reciprocal 1 / (d + eps)


@dataclass(frozen=True, eq=False)
class SurrogateGraphs:
    a_sym: np.ndarray
    a_in: np.ndarray
    a_out: np.ndarray
    a_sym_hat: np.ndarray
    a_in_hat: np.ndarray
    a_out_hat: np.ndarray
    ordering_hash: str = ""

    def normalized(self):
        return {"sym": self.a_sym_hat, "in": self.a_in_hat, "out": self.a_out_hat}


def _inverse_degree(d, policy: ZeroDegreePolicy, eps: float):
    if policy is ZeroDegreePolicy.EPSILON:
        return 1.0 / (d + eps)
    out = np.zeros_like(d)
    np.divide(1.0, d, out=out, where=d > 0)
    return out


def normalize(a) -> np.ndarray:
    """Renormalised adjacency D^-1/2 (A + I) D^-1/2 with D = diag((A + I) 1)."""
    a = np.asarray(a, dtype=float)
    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def build_surrogates(c: Connectome, zero_degree_policy=ZeroDegreePolicy.ZERO,
                     eps: float = 1e-12) -> SurrogateGraphs:
    """First-order symmetric and second-order in/out-degree proximity graphs.

    A_sym = (A + A^T) / 2, A_in = A^T D_out^-1 A, A_out = A D_in^-1 A^T.
    """
    a = c.adjacency
    policy = ZeroDegreePolicy(zero_degree_policy)
    inv_out = _inverse_degree(a.sum(axis=1), policy, eps)
    inv_in = _inverse_degree(a.sum(axis=0), policy, eps)
    a_sym = 0.5 * (a + a.T)
    a_in = a.T @ (inv_out[:, None] * a)
    a_out = a @ (inv_in[:, None] * a.T)
    # exact symmetry; the products above are symmetric only up to rounding
    a_in = 0.5 * (a_in + a_in.T)
    a_out = 0.5 * (a_out + a_out.T)
    return SurrogateGraphs(a_sym, a_in, a_out, normalize(a_sym), normalize(a_in),
                           normalize(a_out), c.ordering_hash)


def aggregate_to_coarse(c: Connectome, field) -> np.ndarray:
    """Volume-weighted mean of a regional field (or V x T array) per coarse region."""
    field = np.asarray(field, dtype=float)
    w = c.volumes.reshape((-1,) + (1,) * (field.ndim - 1))
    out = np.zeros((c.n_coarse,) + field.shape[1:])
    np.add.at(out, c.coarse_map, w * field)
    return out / c.coarse_volumes().reshape((-1,) + (1,) * (field.ndim - 1))
