"""Quasi-static network transport solver.

Every edge i -> j carries a steady intracellular profile n(x), x in [0, L],
with constant +x flux J = -(a n' + h(n, m_eq(n))). The boundary exchange
conditions

    J = mu2 N_i - mu1 n(0)        (uptake from the source node)
    J = mu1 n(L) - mu2 N_j        (release into the target node)

with mu = mu_raw / phi close the problem. It is solved by shooting on the
boundary value at whichever end makes the integration stable: forward from
x = 0 when the linearised drift is non-positive, backward from x = L
otherwise. Each edge is shot independently by a compiled kernel.

Nodes evolve their total concentration u_i = N_i + M_i with

    V_i u_i' = sum_in c J - sum_out c J  (+ V_i * f / phi at seed nodes)

which is the quasi-static node equation multiplied through by its prefactor
1 + dM/dN. Using the single edge flux J at both endpoints makes the node sum
telescope, so sum_i V_i u_i is an exact linear invariant of the scheme.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _edge_kernel, rk
from .connectome import Connectome
from .kinetics import (
    KineticParams,
    LambdaVector,
    SingularityError,
    dm_dn,
    lambda_to_kinetics,
    m_equilibrium,
    seed_equilibrium,
    soluble_from_total,
)

log = logging.getLogger(__name__)


class EdgeBVPError(RuntimeError):
    pass


class BracketFailure(EdgeBVPError):
    pass


class NonConvergence(EdgeBVPError):
    pass


@dataclass(frozen=True)
class SolverTolerances:
    edge_rtol: float = 1e-8
    edge_atol: float = 1e-10
    bvp_rtol: float = 1e-8
    max_iter: int = 60
    node_rtol: float = 1e-6
    node_atol: float = 1e-9
    min_dt: float = 1e-12

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class NodeState:
    n_soluble: np.ndarray
    m_insoluble: np.ndarray
    t: float = 0.0


@dataclass
class EdgeSolution:
    edge: tuple
    length: float
    n_left: float
    n_right: float
    flux: float
    profile: np.ndarray | None = None


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    lambda_: LambdaVector
    seed_regions: tuple
    seed_intensities: tuple
    insoluble: np.ndarray | None = None
    clamp_count: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times[0] != 0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must start at 0 and increase")
        if self.values.shape[1] != len(self.times):
            raise ValueError("values must have one column per time")
        if np.any(self.values < 0):
            raise ValueError("trajectory values must be non-negative")


def _drift(n, k: KineticParams):
    """Linearised forward growth rate of the edge ODE, times the diffusivity."""
    m = k.gamma1 * n * n / (k.beta - k.gamma2 * n)
    w = (1.0 - k.f_frac) * (k.v_a * (1.0 + k.delta * n) * (1.0 - k.epsilon * m) - k.v_r)
    dm = dm_dn(n, k)
    dw = (1.0 - k.f_frac) * k.v_a * (k.delta * (1.0 - k.epsilon * m)
                                     - (1.0 + k.delta * n) * k.epsilon * dm)
    return w + dw * n


class EdgeProblem:
    """Steady-state profiles for a batch of edges sharing one parameter set."""

    def __init__(self, k: KineticParams, lengths, tol: SolverTolerances = SolverTolerances()):
        self.k = k
        self.lengths = np.asarray(lengths, dtype=float)
        self.tol = tol
        self.mu1 = k.mu_hat_release
        self.mu2 = k.mu_hat_uptake
        self.params = _edge_kernel.pack_params(k)
        self.n_integrations = 0

    def _integrate(self, start, flux, coef, t_eval=None, cap=None):
        """Integrate dn/ds = coef * (J + h(n)) over s in [0, 1].

        Components leaving [-cap, cap] are frozen. A wrong shooting guess can
        blow up in finite s; freezing keeps the end value's sign (and hence
        the residual's) without letting one edge stall the shared step size.
        """
        k = self.k
        g1, g2, beta = k.gamma1, k.gamma2, k.beta
        va, vr, dl, ep, ff = k.v_a, k.v_r, k.delta, k.epsilon, 1.0 - k.f_frac
        if g2 > 0:
            # stay clear of the aggregation pole as well
            hi_cap = (beta - k.tol_sing) / g2
            cap = hi_cap if cap is None else np.minimum(cap, hi_cap)

        def f(_, n):
            if cap is not None:
                n = np.clip(n, -cap, cap)
            m = g1 * n * n / (beta - g2 * n)
            h = -ff * (va * (1.0 + dl * n) * (1.0 - ep * m) - vr) * n
            d = coef * (flux + h)
            if cap is not None:
                d = np.where(np.abs(n) >= cap, 0.0, d)
            return d

        self.n_integrations += 1
        res = rk.dopri5(f, 0.0, start, 1.0, rtol=self.tol.edge_rtol, atol=self.tol.edge_atol,
                        t_eval=t_eval)
        return res

    def residual(self, z, ni, nj, forward, length=None):
        """Shooting residual for one edge, increasing in the unknown boundary value ``z``.

        Returns (residual, far-end value, flux).
        """
        length = self.lengths[0] if length is None else length
        return _edge_kernel.residual(float(z), float(ni), float(nj), bool(forward), float(length),
                                     self.params, self.tol.edge_rtol, self.tol.edge_atol)

    def forward(self, ni, nj):
        """True where an edge is shot from x = 0 (stable forward integration)."""
        n_star = 0.5 * (self.mu2 / self.mu1) * (np.asarray(ni) + np.asarray(nj))
        with np.errstate(all="ignore"):
            return ~(_drift(n_star, self.k) > 0)

    def solve(self, ni, nj, guess_left=None, guess_right=None):
        """Solve all edges; returns (n_left, n_right, flux).

        ``guess_left`` / ``guess_right`` warm-start the boundary values.
        """
        ni = np.ascontiguousarray(ni, dtype=float)
        nj = np.ascontiguousarray(nj, dtype=float)
        n_edges = ni.size
        mu1, mu2 = self.mu1, self.mu2
        if n_edges == 0 or (mu1 == 0 and mu2 == 0):
            return np.zeros(n_edges), np.zeros(n_edges), np.zeros(n_edges)
        if self.lengths.size != n_edges:
            raise ValueError(f"{n_edges} edges but {self.lengths.size} lengths")
        if mu1 == 0:
            raise EdgeBVPError("release rate is zero but uptake is not: no steady edge state")
        if guess_left is None or guess_right is None:
            guess_left = guess_right = np.full(n_edges, np.nan)
        nl, nr, fl, status, i, n_int = _edge_kernel.solve_edges(
            ni, nj, self.lengths, np.asarray(guess_left, float), np.asarray(guess_right, float),
            self.params, self.tol.edge_rtol, self.tol.edge_atol, self.tol.bvp_rtol,
            self.tol.max_iter)
        self.n_integrations += n_int
        if status == _edge_kernel.BRACKET_FAILURE:
            raise BracketFailure(f"no sign change of the shooting residual for edge {i} "
                                 f"(N_i={float(ni[i])!r}, N_j={float(nj[i])!r})")
        if status == _edge_kernel.NON_CONVERGENCE:
            raise NonConvergence(f"edge {i} did not converge in {self.tol.max_iter} iterations "
                                 f"(N_i={float(ni[i])!r}, N_j={float(nj[i])!r})")
        return nl, nr, fl


def solve_edge_bvp(n_i, n_j, k: KineticParams, length=1.0, n_profile=0,
                   tol: SolverTolerances = SolverTolerances()) -> EdgeSolution:
    """Single-edge steady state; ``n_profile > 0`` also samples n(x) on a uniform grid."""
    prob = EdgeProblem(k, [length], tol)
    nl, nr, fl = prob.solve(np.array([n_i], float), np.array([n_j], float))
    profile = None
    if n_profile > 0:
        s = np.linspace(0.0, 1.0, n_profile)
        if fl[0] == 0 and nl[0] == 0 and nr[0] == 0:
            profile = np.zeros(n_profile)
        else:
            fwd = bool(prob.forward(n_i, n_j))
            a = k.diffusivity
            if fwd:
                profile = prob._integrate(nl, fl, np.array([-length / a]), t_eval=s).samples[:, 0]
            else:
                profile = prob._integrate(nr, fl, np.array([length / a]), t_eval=s).samples[::-1, 0]
    return EdgeSolution((0, 1), float(length), float(nl[0]), float(nr[0]), float(fl[0]), profile)


class NodeSystem:
    """Right-hand side of the quasi-static node equations on a connectome."""

    def __init__(self, c: Connectome, k: KineticParams, seed_mask=None, lengths=None,
                 tol: SolverTolerances = SolverTolerances()):
        self.c = c
        self.k = k
        self.tol = tol
        self.src, self.dst, self.weight = c.edges()
        if lengths is None:
            edge_len = np.ones(self.src.size)
        else:
            edge_len = np.asarray(lengths, dtype=float)[self.src, self.dst]
            if np.any(edge_len <= 0):
                raise ValueError("edge lengths must be positive")
        self.edges = EdgeProblem(k, edge_len, tol)
        v = c.n_regions
        self.seed_mask = np.zeros(v) if seed_mask is None else np.asarray(seed_mask, dtype=float)
        self.production = self.seed_mask * (k.f_source / k.phi)
        self._guess_left = None
        self._guess_right = None
        self.n_rhs = 0

    def edge_flux(self, n):
        nl, nr, fl = self.edges.solve(n[self.src], n[self.dst], self._guess_left, self._guess_right)
        self._guess_left, self._guess_right = nl, nr
        return fl

    def mass_rate(self, n):
        """d/dt of the total node concentration N + M."""
        self.n_rhs += 1
        fl = self.edge_flux(n)
        net = np.bincount(self.dst, weights=self.weight * fl, minlength=self.c.n_regions)
        net -= np.bincount(self.src, weights=self.weight * fl, minlength=self.c.n_regions)
        return net / self.c.volumes + self.production

    def rhs(self, n):
        """dN/dt for soluble node concentrations ``n``."""
        n = np.asarray(n, dtype=float)
        k = self.k
        if k.gamma2 > 0 and np.any(k.gamma2 * n >= k.beta - k.tol_sing):
            raise SingularityError("node concentration reached the aggregation singularity")
        return self.mass_rate(n) / (1.0 + dm_dn(n, k))


def node_rhs(state: NodeState, c: Connectome, k: KineticParams, seed_mask=None,
             lengths=None, tol: SolverTolerances = SolverTolerances()) -> np.ndarray:
    if np.any(state.n_soluble < 0):
        raise ValueError("node concentrations must be non-negative")
    return NodeSystem(c, k, seed_mask, lengths, tol).rhs(state.n_soluble)


def initial_condition(c: Connectome, k: KineticParams, regions, intensities, total_mass=1.0):
    """Soluble node concentrations at equilibrium with each seed's share of the mass."""
    n0 = np.zeros(c.n_regions)
    for r, w in zip(regions, intensities):
        n0[r] = seed_equilibrium(w * total_mass, k)[0]
    return n0


def simulate(c: Connectome, lv: LambdaVector, regions, intensities=None, total_mass=1.0,
             horizon=12.0, n_steps=48, base: KineticParams | None = None, lengths=None,
             tol: SolverTolerances = SolverTolerances()) -> Trajectory:
    """Run the quasi-static model from a seeded initial condition.

    Returns soluble node concentrations on ``n_steps + 1`` uniform times in
    [0, horizon] (months).
    """
    if horizon <= 0 or n_steps < 1:
        raise ValueError("horizon must be > 0 and n_steps >= 1")
    regions = tuple(int(r) for r in regions)
    if intensities is None:
        intensities = (1.0 / len(regions),) * len(regions)
    intensities = tuple(float(w) for w in intensities)
    k = lambda_to_kinetics(lv, base or KineticParams())
    seed_mask = np.zeros(c.n_regions)
    seed_mask[list(regions)] = 1.0
    system = NodeSystem(c, k, seed_mask, lengths, tol)
    n0 = initial_condition(c, k, regions, intensities, total_mass)
    u0 = n0 + m_equilibrium(n0, k)
    clamps = [0]

    def f(_, u):
        return system.mass_rate(soluble_from_total(u, k))

    def clamp(_, u):
        neg = u < 0
        if np.any(neg):
            clamps[0] += int(neg.sum())
            return np.where(neg, 0.0, u)
        return u

    times = np.linspace(0.0, horizon, n_steps + 1)
    res = rk.dopri5(f, 0.0, u0, horizon, rtol=tol.node_rtol, atol=tol.node_atol, t_eval=times,
                    h_min=tol.min_dt, on_accept=clamp)
    u = np.maximum(res.samples.T, 0.0)
    n = soluble_from_total(u, k)
    n[:, 0] = n0
    info = {"n_steps": res.n_steps, "n_rejected": res.n_rejected, "n_rhs": system.n_rhs,
            "n_edge_integrations": system.edges.n_integrations}
    return Trajectory(times, n, lv, regions, intensities, insoluble=m_equilibrium(n, k),
                      clamp_count=clamps[0], info=info)


def total_mass(c: Connectome, n, k: KineticParams):
    """Volume-weighted node mass sum_i V_i (N_i + M_i); ``n`` may be V x T."""
    n = np.asarray(n, dtype=float)
    w = c.volumes.reshape((-1,) + (1,) * (n.ndim - 1))
    return np.sum(w * (n + m_equilibrium(n, k)), axis=0)


def _meta_path(path: Path, meta_path):
    return Path(meta_path) if meta_path else path.with_name(path.stem + ".meta.json")


def save_trajectory(traj: Trajectory, path, extra_meta: dict | None = None,
                    meta_path=None) -> Path:
    """Write ``traj.csv`` (times header, one row per region) and its metadata JSON.

    The metadata goes to ``meta_path`` or, by default, ``<stem>.meta.json``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(f"{t:.17g}" for t in traj.times)]
    lines += [",".join(f"{v:.17g}" for v in row) for row in traj.values]
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "lambda": traj.lambda_.as_array().tolist(),
        "seed_regions": list(traj.seed_regions),
        "seed_intensities": list(traj.seed_intensities),
        "clamp_count": traj.clamp_count,
        "species": "soluble",
        "solver": traj.info,
    }
    meta.update(extra_meta or {})
    _meta_path(path, meta_path).write_text(json.dumps(meta, indent=1, sort_keys=True))
    return path


def load_trajectory(path, meta_path=None) -> Trajectory:
    path = Path(path)
    rows = [list(map(float, line.split(","))) for line in path.read_text().splitlines() if line]
    meta = json.loads(_meta_path(path, meta_path).read_text())
    traj = Trajectory(np.array(rows[0]), np.array(rows[1:]),
                      LambdaVector.from_sequence(meta["lambda"]), tuple(meta["seed_regions"]),
                      tuple(meta["seed_intensities"]), clamp_count=meta.get("clamp_count", 0),
                      info=meta)
    return traj
