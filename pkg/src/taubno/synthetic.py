"""Synthetic connectomes and the bundled seed library for desk-scale runs."""

from __future__ import annotations

import numpy as np

from .connectome import Connectome

# bilateral toy atlas, one coarse region per structure group and hemisphere
_STRUCTURES = [
    ("Field CA1", "hippocampus"),
    ("Field CA3", "hippocampus"),
    ("Entorhinal area", "cortex"),
    ("Primary motor area", "cortex"),
    ("Caudoputamen", "striatum"),
    ("Amygdala", "striatum"),
    ("Thalamus", "brainstem"),
    ("Pons", "brainstem"),
]


def region_names(n_regions: int):
    per_hemi = n_regions // 2
    names = []
    for hemi in ("LH", "RH"):
        for i in range(per_hemi):
            base = _STRUCTURES[i][0] if i < len(_STRUCTURES) else f"Region {i}"
            names.append(f"{base}, {hemi}")
    if n_regions % 2:
        names.append("Midline")
    return names


def synthetic_connectome(n_regions=16, density=0.35, mean_out_strength=0.02, seed=0):
    """Directed, weighted, hemispherically organised toy connectome.

    Weights are log-normal with stronger ipsilateral than contralateral
    connections; rows are then scaled so the mean out-strength is
    ``mean_out_strength``. Volumes are uniform on [0.5, 2].
    """
    if n_regions < 2:
        raise ValueError("need at least two regions")
    rng = np.random.default_rng(seed)
    names = region_names(n_regions)
    hemi = np.array([0 if n.endswith("LH") else 1 for n in names])
    same = hemi[:, None] == hemi[None, :]
    p = np.where(same, density * 1.5, density * 0.5)
    mask = rng.random((n_regions, n_regions)) < np.clip(p, 0, 1)
    # homotopic links in both directions keep the graph connected across hemispheres
    per_hemi = n_regions // 2
    for i in range(per_hemi):
        mask[i, i + per_hemi] = mask[i + per_hemi, i] = True
    # a directed ring inside each hemisphere guarantees strong connectivity
    for h in range(2):
        for i in range(per_hemi):
            mask[h * per_hemi + i, h * per_hemi + (i + 1) % per_hemi] = True
    np.fill_diagonal(mask, False)
    w = rng.lognormal(mean=0.0, sigma=0.75, size=(n_regions, n_regions))
    w *= np.where(same, 1.0, 0.4)
    adj = np.where(mask, w, 0.0)
    adj *= mean_out_strength * n_regions / adj.sum()
    volumes = rng.uniform(0.5, 2.0, n_regions)
    groups = sorted({g for _, g in _STRUCTURES})
    coarse = []
    for i, name in enumerate(names):
        j = i % per_hemi if i < 2 * per_hemi else 0
        g = _STRUCTURES[j][1] if j < len(_STRUCTURES) else groups[0]
        coarse.append(groups.index(g) + len(groups) * (hemi[i] if i < 2 * per_hemi else 0))
    used = sorted(set(coarse))
    coarse = [used.index(k) for k in coarse]
    return Connectome(adj, volumes, names, coarse, len(used))


def default_seed_library(c: Connectome):
    """Seven seed configurations modelled on the reference regimes.

    Regimes 1-4 seed "Field CA1, LH"; 5 seeds caudoputamen and motor cortex on
    the right; 6 is a multifocal brainstem/subcortical pattern; 7 seeds the
    entorhinal area bilaterally. Missing regions are skipped.
    """
    lookup = {name: i for i, name in enumerate(c.region_names)}

    def entry(name, regions):
        idx = [lookup[r] for r in regions if r in lookup] or [0]
        return {"name": name, "regions": idx, "intensities": [1.0 / len(idx)] * len(idx),
                "total_mass": 1.0}

    lib = [entry(f"regime{i}: Field CA1, LH", ["Field CA1, LH"]) for i in range(1, 5)]
    lib.append(entry("regime5: Caudoputamen + Primary motor area, RH",
                     ["Caudoputamen, RH", "Primary motor area, RH"]))
    lib.append(entry("regime6: Pons LH; Amygdala, Thalamus, Pons, Primary motor area RH",
                     ["Pons, LH", "Amygdala, RH", "Thalamus, RH", "Pons, RH",
                      "Primary motor area, RH"]))
    lib.append(entry("regime7: Entorhinal area, LH and RH",
                     ["Entorhinal area, LH", "Entorhinal area, RH"]))
    return lib
