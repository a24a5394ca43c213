"""Tau-BNO surrogate: N = P o G o (R * Q).

R (function operator) lifts [u0, lambda] per region, Q (query operator)
lifts u0 alone, both through additive dual-kernel layers
sigma(Z W + Fourier[Z] + Diff[Z] + b). Their Hadamard product feeds the
directed graph operator G (three symmetric-surrogate branches, averaged) and
the projector P maps hidden channels to T output times.

All forward functions take batched inputs: u0 (B, V), lambda (B, 5).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .connectome import SurrogateGraphs, build_surrogates, load_connectome, save_connectome

log = logging.getLogger(__name__)

ABLATIONS = ("no_fo", "no_qo", "no_dgo", "no_fourier", "no_diff")
BRANCHES = ("sym", "in", "out")


class CheckpointError(RuntimeError):
    pass


class OrderingMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class TauBnoConfig:
    n_regions: int
    n_times: int
    n_params: int = 5
    hidden: int = 64
    modes: int = 16
    layers_fo: int = 2
    layers_qo: int = 2
    layers_dgo: int = 2
    kernel_width: int = 3
    activation: str = "gelu"
    ablations: tuple = ()
    ordering_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ablations", tuple(sorted(set(self.ablations))))
        bad = set(self.ablations) - set(ABLATIONS)
        if bad:
            raise ValueError(f"unknown ablation toggles {sorted(bad)}; choose from {ABLATIONS}")
        if {"no_fo", "no_qo", "no_dgo"} <= set(self.ablations):
            raise ValueError("cannot switch off all three operators (no_fo, no_qo, no_dgo)")
        if not 0 <= self.modes <= self.n_regions // 2 + 1:
            raise ValueError(f"modes must be <= V//2 + 1 = {self.n_regions // 2 + 1}")
        if min(self.layers_fo, self.layers_qo, self.layers_dgo, self.hidden, self.n_times) < 1:
            raise ValueError("layer counts, hidden width and n_times must be >= 1")
        if self.kernel_width % 2 == 0:
            raise ValueError("kernel_width must be odd")
        if self.activation != "gelu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def to_dict(self):
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["ablations"] = tuple(d.get("ablations", ()))
        return cls(**d)


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class TauBnoModel:
    """Parameters live in an ordered dict keyed by dotted path names."""

    def __init__(self, config: TauBnoConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, T.Parameter] = {}
        self.lambda_mean = np.zeros(config.n_params)
        self.lambda_std = np.ones(config.n_params)
        self.basis = T.SpectralBasis(config.n_regions, config.modes)
        self._build(np.random.default_rng(seed))

    # construction

    def _affine(self, rng, name, n_in, n_out, bias=True):
        self._add(f"{name}.w", _glorot(rng, n_in, n_out, (n_in, n_out)), "glorot_uniform")
        if bias:
            self._add(f"{name}.b", np.zeros(n_out), "zeros")

    def _add(self, name, data, spec):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = T.Parameter(data, name, spec)

    def _dual_layer(self, rng, name):
        c, d = self.config, self.config.hidden
        self._affine(rng, name, d, d)
        if "no_fourier" not in c.ablations and c.modes > 0:
            scale = 1.0 / (d * c.modes)
            self._add(f"{name}.spec_re", scale * rng.random((c.modes, d, d)), "uniform_1/(D*K)")
            self._add(f"{name}.spec_im", scale * rng.random((c.modes, d, d)), "uniform_1/(D*K)")
        if "no_diff" not in c.ablations:
            w = c.kernel_width
            self._add(f"{name}.diff", _glorot(rng, w * d, d, (w, d, d)), "glorot_uniform")

    def _build(self, rng):
        c, d = self.config, self.config.hidden
        if "no_fo" in c.ablations:
            self._affine(rng, "fo.lift", 1, d)
        else:
            self._affine(rng, "fo.lift", 1 + c.n_params, d)
            for i in range(c.layers_fo):
                self._dual_layer(rng, f"fo.layer{i}")
            self._affine(rng, "fo.proj", d, d)
        if "no_qo" not in c.ablations:
            self._affine(rng, "qo.lift", 1, d)
            for i in range(c.layers_qo):
                self._dual_layer(rng, f"qo.layer{i}")
            self._affine(rng, "qo.proj", d, d)
        if "no_dgo" not in c.ablations:
            self._affine(rng, "dgo.embed", d, d)
            for br in BRANCHES:
                for i in range(c.layers_dgo):
                    name = f"dgo.{br}.layer{i}"
                    self._add(f"{name}.w_self", _glorot(rng, d, d, (d, d)), "glorot_uniform")
                    self._add(f"{name}.w_nbr", _glorot(rng, d, d, (d, d)), "glorot_uniform")
                    self._add(f"{name}.b", np.zeros(d), "zeros")
        self._affine(rng, "proj.fc1", d, d)
        self._affine(rng, "proj.fc2", d, c.n_times)

    # bookkeeping

    def parameters(self):
        return list(self.params.values())

    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def manifest(self):
        out, offset = [], 0
        for name, p in self.params.items():
            out.append({"name": name, "shape": list(p.shape), "offset": offset,
                        "init": p.init_spec})
            offset += 4 * p.data.size
        return out

    def set_lambda_stats(self, mean, std):
        std = np.asarray(std, dtype=float)
        self.lambda_mean = np.asarray(mean, dtype=float).copy()
        self.lambda_std = np.where(std > 0, std, 1.0)

    def p(self, name):
        return self.params[name]

    # forward

    def forward(self, u0, lam, graphs) -> T.Tensor:
        """Predicted soluble trajectories (B, V, T) for raw u0 (B, V) and raw lambda (B, 5)."""
        u0 = np.atleast_2d(np.asarray(u0, dtype=float))
        lam = np.atleast_2d(np.asarray(lam, dtype=float))
        c = self.config
        if u0.shape[1] != c.n_regions or lam.shape[1] != c.n_params or len(u0) != len(lam):
            raise T.ShapeError(f"expected u0 (B, {c.n_regions}) and lambda (B, {c.n_params}), "
                               f"got {u0.shape} and {lam.shape}")
        lam_std = (lam - self.lambda_mean) / self.lambda_std
        r = function_operator(u0, lam_std, self)
        if "no_qo" in c.ablations:
            f = r
        else:
            f = fuse(r, query_operator(u0, self))
        g = f if "no_dgo" in c.ablations else directed_graph_operator(f, graphs, self)
        return projector(g, self)

    __call__ = forward

    def predict(self, u0, lam, graphs) -> np.ndarray:
        return self.forward(u0, lam, graphs).data


def _activation(z):
    return T.gelu(z)


def dual_kernel_layer(z, model: TauBnoModel, name: str):
    """sigma(Z W + Fourier[Z] + Diff[Z] + b)."""
    pre = T.matmul(z, model.p(f"{name}.w"))
    if f"{name}.spec_re" in model.params:
        re, im = T.spectral_forward(z, model.basis)
        yr, yi = T.spectral_mix(re, im, model.p(f"{name}.spec_re"), model.p(f"{name}.spec_im"))
        pre = T.add(pre, T.spectral_inverse(yr, yi, model.basis))
    if f"{name}.diff" in model.params:
        pre = T.add(pre, T.diff_conv(z, model.p(f"{name}.diff")))
    return _activation(T.add(pre, model.p(f"{name}.b")))


def _lift_proj_stack(x, model, prefix, n_layers):
    z = T.affine(x, model.p(f"{prefix}.lift.w"), model.p(f"{prefix}.lift.b"))
    for i in range(n_layers):
        z = dual_kernel_layer(z, model, f"{prefix}.layer{i}")
    return T.affine(z, model.p(f"{prefix}.proj.w"), model.p(f"{prefix}.proj.b"))


def function_operator(u0, lam, model: TauBnoModel) -> T.Tensor:
    """R[u0, lambda]: (B, V) and standardised (B, 5) -> (B, V, D)."""
    b, v = u0.shape
    if "no_fo" in model.config.ablations:
        return T.affine(u0[:, :, None], model.p("fo.lift.w"), model.p("fo.lift.b"))
    x = np.concatenate([u0[:, :, None], np.broadcast_to(lam[:, None, :], (b, v, lam.shape[1]))],
                       axis=-1)
    return _lift_proj_stack(T.Tensor(x), model, "fo", model.config.layers_fo)


def query_operator(u0, model: TauBnoModel) -> T.Tensor:
    """Q[u0]: (B, V) -> (B, V, D); lambda is not an input."""
    return _lift_proj_stack(T.Tensor(u0[:, :, None]), model, "qo", model.config.layers_qo)


def fuse(r, q) -> T.Tensor:
    """Pointwise gate r * q."""
    r, q = T.as_tensor(r), T.as_tensor(q)
    if r.shape != q.shape:
        raise T.ShapeError(f"fuse: shapes {r.shape} and {q.shape} differ")
    return T.mul(r, q)


def directed_graph_operator(f, graphs: SurrogateGraphs, model: TauBnoModel) -> T.Tensor:
    """Shared embedding, three branch stacks over A_sym, A_in, A_out, then their mean."""
    h = model.config.ordering_hash
    if h and graphs.ordering_hash and h != graphs.ordering_hash:
        raise OrderingMismatch("surrogate graphs and model were built on different "
                               "region orderings")
    z0 = T.affine(f, model.p("dgo.embed.w"), model.p("dgo.embed.b"))
    outs = []
    for br, a_hat in zip(BRANCHES, (graphs.a_sym_hat, graphs.a_in_hat, graphs.a_out_hat)):
        z = z0
        a = T.Tensor(a_hat)
        for i in range(model.config.layers_dgo):
            name = f"dgo.{br}.layer{i}"
            z = _activation(T.graph_propagate(z, a, model.p(f"{name}.w_self"),
                                              model.p(f"{name}.w_nbr"), model.p(f"{name}.b")))
        outs.append(z)
    return T.mul(T.add(T.add(outs[0], outs[1]), outs[2]), 1.0 / 3.0)


def projector(g, model: TauBnoModel) -> T.Tensor:
    """Two affine layers with one activation: (B, V, D) -> (B, V, T)."""
    z = _activation(T.affine(g, model.p("proj.fc1.w"), model.p("proj.fc1.b")))
    return T.affine(z, model.p("proj.fc2.w"), model.p("proj.fc2.b"))


def relative_l2_loss(pred, truth, floor=1e-12) -> T.Tensor:
    """Sum over the batch of ||truth - pred|| / ||truth||, norms over (V, T)."""
    pred = T.as_tensor(pred)
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 2:
        truth = truth[None]
        pred = T.reshape(pred, (1,) + pred.shape) if pred.ndim == 2 else pred
    if pred.shape != truth.shape:
        raise T.ShapeError(f"loss: prediction {pred.shape} vs truth {truth.shape}")
    norms = np.sqrt(np.sum(truth * truth, axis=(1, 2)))
    if np.any(norms < floor):
        log.warning("truth with zero norm in loss; flooring at %g", floor)
        norms = np.maximum(norms, floor)
    diff = T.sub(pred, truth)
    # the tiny offset keeps d sqrt finite at an exact fit
    err = T.sqrt(T.add(T.sum_(T.mul(diff, diff), axis=(1, 2)), 1e-300))
    return T.sum_(T.mul(err, 1.0 / norms))


# checkpoints

def save_checkpoint(model: TauBnoModel, directory, connectome=None, extra: dict | None = None):
    """``model.meta.json`` + ``model.bin`` (little-endian float32, manifest order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = b"".join(p.data.astype("<f4").tobytes() for p in model.params.values())
    (directory / "model.bin").write_bytes(blob)
    meta = {
        "config": model.config.to_dict(),
        "parameters": model.manifest(),
        "ordering_hash": model.config.ordering_hash,
        "lambda_mean": model.lambda_mean.tolist(),
        "lambda_std": model.lambda_std.tolist(),
        "bin_sha256": hashlib.sha256(blob).hexdigest(),
        "dtype": "float32-le",
    }
    meta.update(extra or {})
    (directory / "model.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    if connectome is not None:
        save_connectome(connectome, directory / "connectome")
    return directory


def load_checkpoint(directory) -> tuple[TauBnoModel, dict]:
    directory = Path(directory)
    meta_path, bin_path = directory / "model.meta.json", directory / "model.bin"
    for path in (meta_path, bin_path):
        if not path.exists():
            raise FileNotFoundError(f"checkpoint file not found: {path}")
    meta = json.loads(meta_path.read_text())
    blob = bin_path.read_bytes()
    if "bin_sha256" in meta and hashlib.sha256(blob).hexdigest() != meta["bin_sha256"]:
        raise CheckpointError(f"{bin_path}: content hash does not match model.meta.json")
    model = TauBnoModel(TauBnoConfig.from_dict(meta["config"]))
    flat = np.frombuffer(blob, dtype="<f4")
    names = [e["name"] for e in meta["parameters"]]
    if names != list(model.params):
        raise CheckpointError("parameter manifest does not match the architecture config")
    for entry in meta["parameters"]:
        p = model.params[entry["name"]]
        start = entry["offset"] // 4
        p.data = flat[start:start + p.data.size].astype(np.float64).reshape(entry["shape"])
    model.set_lambda_stats(meta["lambda_mean"], meta["lambda_std"])
    return model, meta


def checkpoint_graphs(directory, model: TauBnoModel) -> SurrogateGraphs:
    """Surrogates from the connectome copied into a checkpoint, hash-checked."""
    c = load_connectome(Path(directory) / "connectome")
    if model.config.ordering_hash and c.ordering_hash != model.config.ordering_hash:
        raise OrderingMismatch("checkpoint connectome ordering does not match the model")
    return build_surrogates(c)


def with_ablations(config: TauBnoConfig, toggles) -> TauBnoConfig:
    return replace(config, ablations=tuple(config.ablations) + tuple(toggles))
