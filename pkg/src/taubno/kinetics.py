"""Aggregation/fragmentation kinetics, axonal active transport and seed equilibria.

All functions accept scalars or numpy arrays and are pure.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.optimize import brentq

LAMBDA_NAMES = ("lambda_f", "lambda_gamma", "lambda_delta", "lambda_epsilon", "lambda_mu")


class KineticsError(ValueError):
    pass


class SingularityError(KineticsError):
    """Soluble concentration reached the aggregation singularity gamma2 * n >= beta."""


class NoRootError(KineticsError):
    pass


@dataclass(frozen=True)
class KineticParams:
    """Biophysical coefficients of the transport model.

    Rates are per month, concentrations in arbitrary concentration units and
    lengths in edge-length units. ``mu_release`` / ``mu_uptake`` are the raw
    boundary rates; the quasi-static solver works with ``mu / phi``.
    """

    beta: float = 1.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    phi: float = 0.01
    f_frac: float = 0.0
    v_a: float = 0.0
    v_r: float = 0.0
    delta: float = 0.1
    epsilon: float = 0.1
    diffusivity: float = 1.0
    mu_release: float = 0.0
    mu_uptake: float = 0.0
    f_source: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise KineticsError(f"beta must be > 0, got {self.beta}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise KineticsError("aggregation rates gamma1, gamma2 must be >= 0")
        if not 0 < self.phi < 1:
            raise KineticsError(f"phi must lie in (0, 1), got {self.phi}")
        if not 0 <= self.f_frac <= 1:
            raise KineticsError(f"f_frac must lie in [0, 1], got {self.f_frac}")
        if not self.diffusivity > 0:
            raise KineticsError(f"diffusivity must be > 0, got {self.diffusivity}")
        if self.mu_release < 0 or self.mu_uptake < 0:
            raise KineticsError("mu_release and mu_uptake must be >= 0")

    @property
    def tol_sing(self) -> float:
        return 1e-9 * self.beta

    @property
    def mu_hat_release(self) -> float:
        return self.mu_release / self.phi

    @property
    def mu_hat_uptake(self) -> float:
        return self.mu_uptake / self.phi

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KineticParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in d.items() if k in names})


@dataclass(frozen=True)
class LambdaVector:
    """The five sampled parameters fed to the surrogate."""

    lambda_f: float
    lambda_gamma: float
    lambda_delta: float
    lambda_epsilon: float
    lambda_mu: float

    def __post_init__(self):
        for name in LAMBDA_NAMES:
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise KineticsError(f"{name} must be finite and >= 0, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in LAMBDA_NAMES], dtype=float)

    @classmethod
    def from_sequence(cls, values) -> "LambdaVector":
        values = [float(v) for v in values]
        if len(values) != 5:
            raise KineticsError(f"lambda vector needs 5 entries, got {len(values)}")
        return cls(*values)

    @classmethod
    def parse(cls, text: str) -> "LambdaVector":
        return cls.from_sequence(text.split(","))


def gamma_conversion(m, n, k: KineticParams):
    """Net fragmentation-minus-aggregation rate beta*m - gamma1*n^2 - gamma2*m*n."""
    # factored form keeps the rounding of m*(beta - gamma2*n) consistent with m_equilibrium
    return m * (k.beta - k.gamma2 * n) - k.gamma1 * n * n


def _check_singularity(n, k: KineticParams):
    if k.gamma2 > 0 and np.any(k.gamma2 * np.asarray(n) >= k.beta - k.tol_sing):
        worst = float(np.max(np.asarray(n)))
        raise SingularityError(
            f"gamma2 * n = {k.gamma2 * worst:.6g} reaches beta - tol = {k.beta - k.tol_sing:.6g}"
        )


def m_equilibrium(n, k: KineticParams):
    """Insoluble concentration in aggregation equilibrium with soluble ``n``."""
    _check_singularity(n, k)
    return k.gamma1 * n * n / (k.beta - k.gamma2 * n)


def dm_dn(n, k: KineticParams):
    """Derivative of :func:`m_equilibrium`; ``1 + dm_dn`` is the node prefactor."""
    d = k.beta - k.gamma2 * n
    return k.gamma1 * n * (2 * k.beta - k.gamma2 * n) / (d * d)


def active_transport(n, m, k: KineticParams):
    """Motor-driven flux density h(n, m) on the axonal compartment."""
    return -(1.0 - k.f_frac) * (k.v_a * (1.0 + k.delta * n) * (1.0 - k.epsilon * m) - k.v_r) * n


def soluble_from_total(u, k: KineticParams):
    """Invert u = n + m_equilibrium(n) in closed form (vectorised).

    The quadratic (gamma1 - gamma2) n^2 + (beta + gamma2 u) n - beta u = 0 is
    solved with the cancellation-free root formula; its discriminant is
    (beta - gamma2 u)^2 + 4 gamma1 beta u >= 0.
    """
    u = np.asarray(u, dtype=float)
    b = k.beta + k.gamma2 * u
    disc = (k.beta - k.gamma2 * u) ** 2 + 4.0 * k.gamma1 * k.beta * u
    denom = b + np.sqrt(disc)
    return np.where(u > 0, 2.0 * k.beta * u / np.where(denom > 0, denom, 1.0), 0.0)


def seed_equilibrium(seed_mass: float, k: KineticParams) -> tuple[float, float]:
    """Split a seed mass into soluble/insoluble parts at aggregation equilibrium."""
    if seed_mass < 0:
        raise KineticsError(f"seed mass must be >= 0, got {seed_mass}")
    if seed_mass == 0:
        return 0.0, 0.0
    if k.gamma1 == 0:
        return float(seed_mass), 0.0
    hi = seed_mass
    if k.gamma2 > 0:
        hi = min(hi, k.beta / k.gamma2 - k.tol_sing)

    def excess(n):
        return n + k.gamma1 * n * n / (k.beta - k.gamma2 * n) - seed_mass

    if excess(hi) < 0:
        raise NoRootError(f"no soluble root for seed mass {seed_mass} on [0, {hi}]")
    n0 = brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(n0), float(m_equilibrium(n0, k))


def lambda_to_kinetics(lv: LambdaVector, base: KineticParams) -> KineticParams:
    """Overlay the five sampled parameters on a base parameter set.

    production -> f_source, aggregate rate -> gamma1, anterograde and
    retrograde velocities -> v_a / v_r, uptake-release -> both mu rates.
    """
    return replace(
        base,
        f_source=lv.lambda_f,
        gamma1=lv.lambda_gamma,
        v_a=lv.lambda_delta,
        v_r=lv.lambda_epsilon,
        mu_release=lv.lambda_mu,
        mu_uptake=lv.lambda_mu,
    )
