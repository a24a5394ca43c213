"""Metrics, per-time R^2, ablation variants and report files.

Conventions: metrics are pooled over every (sample, region, time) entry of a
split before reduction; R^2 at a time index is taken across all regional
values of all samples at that time.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .connectome import Connectome, aggregate_to_coarse, build_surrogates
from .dataset import SampleSet
from .model import ABLATIONS, TauBnoModel

log = logging.getLogger(__name__)


def compute_metrics(pred, truth, floor=1e-12):
    """(RMSE, MAE, relative L2) over all entries."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from truth {truth.shape}")
    err = pred - truth
    norm = np.sqrt(np.sum(truth * truth))
    if norm < floor:
        log.warning("truth has (near) zero norm; relative L2 uses floor %g", floor)
        norm = floor
    return (float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err))),
            float(np.sqrt(np.sum(err * err)) / norm))


def _r2(pred, truth):
    ss_res = np.sum((truth - pred) ** 2)
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    return np.nan if ss_tot == 0 else 1.0 - ss_res / ss_tot


def r2_per_time(pred, truth):
    """R^2 across regions (and samples) at each time index; NaN where truth has no variance.

    Accepts (V, T) or (N, V, T) arrays.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from truth {truth.shape}")
    p = pred.reshape(-1, pred.shape[-1])
    t = truth.reshape(-1, truth.shape[-1])
    return np.array([_r2(p[:, j], t[:, j]) for j in range(t.shape[1])])


def pooled_r2(pred, truth):
    return float(_r2(np.ravel(pred), np.ravel(truth)))


@dataclass
class EvalReport:
    rmse: float
    mae: float
    rel_l2: float
    pooled_r2: float
    per_time_abs_err: list
    per_time_rmse: list
    per_time_r2: list
    per_region_rmse: list
    per_region_mae: list
    times: list
    split: str = "test"
    n_samples: int = 0
    config_hash: str = ""
    ckpt_hash: str = ""
    ablations: list = field(default_factory=list)
    conventions: dict = field(default_factory=lambda: {
        "aggregation": "pooled over samples, regions and times before reduction",
        "r2_axis": "across regions (and samples) at each time index; NaN if no variance",
        "species": "soluble N",
    })

    @property
    def per_region_err(self):
        return self.per_region_rmse

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def build_report(pred, truth, times, split="test", **meta) -> EvalReport:
    """``pred``/``truth`` are (N, V, T) arrays for the T predicted times."""
    rmse, mae, rel = compute_metrics(pred, truth)
    err = pred - truth
    return EvalReport(
        rmse=rmse, mae=mae, rel_l2=rel, pooled_r2=pooled_r2(pred, truth),
        per_time_abs_err=np.mean(np.abs(err), axis=(0, 1)).tolist(),
        per_time_rmse=np.sqrt(np.mean(err * err, axis=(0, 1))).tolist(),
        per_time_r2=r2_per_time(pred, truth).tolist(),
        per_region_rmse=np.sqrt(np.mean(err * err, axis=(0, 2))).tolist(),
        per_region_mae=np.mean(np.abs(err), axis=(0, 2)).tolist(),
        times=list(map(float, times)), split=split, n_samples=int(len(pred)), **meta)


def evaluate(model: TauBnoModel, data: SampleSet, c: Connectome, split="test", **meta):
    """Predict a split and score it; returns (report, predictions)."""
    if len(data) == 0:
        raise ValueError(f"split {split!r} has no samples")
    graphs = build_surrogates(c)
    pred = model.predict(data.u0, data.lam, graphs)
    report = build_report(pred, data.target, data.times[1:], split=split,
                          ablations=list(model.config.ablations), **meta)
    return report, pred


def ablate(model: TauBnoModel, toggles) -> TauBnoModel:
    """Model with toggles applied, sharing every surviving parameter by name.

    Parameters whose component was removed are dropped; a toggle that
    reshapes a parameter (no_fo shrinks the lifting to u0 only) keeps the
    u0 row. Retrain for a fair comparison.
    """
    toggles = tuple(toggles)
    bad = set(toggles) - set(ABLATIONS)
    if bad:
        raise ValueError(f"unknown ablation toggles {sorted(bad)}")
    cfg = replace(model.config, ablations=tuple(model.config.ablations) + toggles)
    out = TauBnoModel(cfg)
    out.set_lambda_stats(model.lambda_mean, model.lambda_std)
    for name, p in out.params.items():
        src = model.params.get(name)
        if src is None:
            continue
        if src.shape == p.shape:
            p.data = src.data.copy()
        elif name == "fo.lift.w":
            p.data = src.data[:1].copy()
    return out


def emit_report(report: EvalReport, out_dir, c: Connectome | None = None, pred=None, truth=None,
                figures=True):
    """Write report.json, per_time.csv, per_region.csv and, with data, coarse CSV and figures.

    per_time.csv columns: step, time, abs_err, rmse, r2.
    per_region.csv columns: region, name, coarse, rmse, mae.
    coarse_trajectory.csv columns: coarse_region, step, time, truth, pred (test-set means of
    the volume-weighted coarse aggregates).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    with open(out / "per_time.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "abs_err", "rmse", "r2"])
        for j, t in enumerate(report.times):
            w.writerow([j + 1, repr(float(t)), repr(float(report.per_time_abs_err[j])),
                        repr(float(report.per_time_rmse[j])),
                        repr(float(report.per_time_r2[j]))])
    names = c.region_names if c is not None else [""] * len(report.per_region_rmse)
    coarse = c.coarse_map.tolist() if c is not None else [""] * len(report.per_region_rmse)
    with open(out / "per_region.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "name", "coarse", "rmse", "mae"])
        for i, (r, m) in enumerate(zip(report.per_region_rmse, report.per_region_mae)):
            w.writerow([i, names[i], coarse[i], repr(float(r)), repr(float(m))])
    written = ["report.json", "per_time.csv", "per_region.csv"]
    if c is not None and pred is not None and truth is not None and len(pred):
        ct = np.mean([aggregate_to_coarse(c, s) for s in truth], axis=0)
        cp = np.mean([aggregate_to_coarse(c, s) for s in pred], axis=0)
        with open(out / "coarse_trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coarse_region", "step", "time", "truth", "pred"])
            for k in range(c.n_coarse):
                for j, t in enumerate(report.times):
                    w.writerow([k, j + 1, repr(float(t)), repr(float(ct[k, j])),
                                repr(float(cp[k, j]))])
        written.append("coarse_trajectory.csv")
        if figures:
            from .plotting import report_figures
            written += report_figures(report, out, pred, truth, ct, cp)
    return written


def load_report(out_dir) -> EvalReport:
    return EvalReport.from_dict(json.loads((Path(out_dir) / "report.json").read_text()))
