"""Mini-batch AdamW training of Tau-BNO with cosine annealing and best-val checkpointing."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .connectome import Connectome, SurrogateGraphs, build_surrogates
from .dataset import SampleSet
from .model import TauBnoConfig, TauBnoModel, relative_l2_loss, save_checkpoint
from .optim import AdamW, cosine_lr

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainSettings:
    epochs: int = 1000
    batch_size: int = 16
    lr: float = 8e-4
    lr_min: float = 2e-6
    weight_decay: float = 0.01
    seed: int = 0

    @classmethod
    def from_config(cls, config):
        s = config.section("train")
        return cls(int(s["epochs"]), int(s["batch_size"]), float(s["lr"]), float(s["lr_min"]),
                   float(s["weight_decay"]), int(s["seed"]))


@dataclass
class TrainResult:
    model: TauBnoModel
    log_rows: list
    best_epoch: int
    best_val: float


def model_config_from(config, n_regions, n_times, ordering_hash, ablations=()) -> TauBnoConfig:
    m = config.section("model")
    return TauBnoConfig(n_regions=n_regions, n_times=n_times, hidden=int(m["hidden"]),
                        modes=min(int(m["modes"]), n_regions // 2 + 1),
                        layers_fo=int(m["layers_fo"]), layers_qo=int(m["layers_qo"]),
                        layers_dgo=int(m["layers_dgo"]), kernel_width=int(m["kernel_width"]),
                        ablations=tuple(m["ablations"]) + tuple(ablations),
                        ordering_hash=ordering_hash)


def mean_loss(model: TauBnoModel, data: SampleSet, graphs: SurrogateGraphs, batch_size=64):
    """Average per-sample relative L2 error (no gradient bookkeeping needed)."""
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, len(data), batch_size):
        sl = slice(lo, lo + batch_size)
        pred = model.predict(data.u0[sl], data.lam[sl], graphs)
        diff = pred - data.target[sl]
        num = np.sqrt(np.sum(diff * diff, axis=(1, 2)))
        den = np.maximum(np.sqrt(np.sum(data.target[sl] ** 2, axis=(1, 2))), 1e-12)
        total += float(np.sum(num / den))
    return total / len(data)


def train(train_set: SampleSet, val_set: SampleSet, c: Connectome, model_config: TauBnoConfig,
          settings: TrainSettings, out_dir=None, extra_meta: dict | None = None) -> TrainResult:
    """Fit a fresh model; deterministic given ``settings.seed``.

    Writes ``train_log.csv`` and the best-validation checkpoint when
    ``out_dir`` is given.
    """
    if len(train_set) == 0:
        raise TrainingError("training split is empty")
    graphs = build_surrogates(c)
    model = TauBnoModel(model_config, seed=settings.seed)
    model.set_lambda_stats(train_set.lam.mean(axis=0), train_set.lam.std(axis=0))
    opt = AdamW(model.parameters(), lr=settings.lr, weight_decay=settings.weight_decay)
    rng = np.random.default_rng(settings.seed)
    n = len(train_set)
    best_val, best_epoch, best_params = np.inf, -1, None
    rows = []
    t0 = time.perf_counter()
    for epoch in range(settings.epochs):
        lr = cosine_lr(epoch, settings.lr, settings.lr_min, settings.epochs)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for bi, lo in enumerate(range(0, n, settings.batch_size)):
            idx = order[lo:lo + settings.batch_size]
            opt.zero_grad()
            pred = model.forward(train_set.u0[idx], train_set.lam[idx], graphs)
            loss = relative_l2_loss(pred, train_set.target[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            loss.backward()
            opt.step(lr)
            epoch_loss += value
        train_loss = epoch_loss / n
        val_loss = mean_loss(model, val_set, graphs) if len(val_set) else train_loss
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}
        rows.append((epoch, lr, train_loss, val_loss, time.perf_counter() - t0))
        if epoch % max(1, settings.epochs // 10) == 0 or epoch == settings.epochs - 1:
            log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, lr, train_loss, val_loss)
    if best_params is not None:
        for k, p in model.params.items():
            p.data = best_params[k]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_log(rows, out_dir / "train_log.csv")
        meta = {"best_epoch": best_epoch, "best_val_loss": best_val,
                "train": settings.__dict__, "loss": "sum over batch of per-sample relative L2"}
        meta.update(extra_meta or {})
        save_checkpoint(model, out_dir, connectome=c, extra=meta)
    return TrainResult(model, rows, best_epoch, best_val)


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_loss", "wall_seconds"])
        for epoch, lr, tr, va, wall in rows:
            w.writerow([epoch, repr(float(lr)), repr(float(tr)), repr(float(va)), f"{wall:.3f}"])
