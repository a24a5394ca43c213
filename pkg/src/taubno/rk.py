"""Dormand-Prince 5(4) embedded Runge-Kutta integration with dense output.

Error control uses the max norm over components, so a vector of independent
scalar problems (e.g. one per connectome edge) integrated together shares a
step size while every component meets its own tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Butcher tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th-order minus embedded 4th-order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

# continuous extension:
# y(t + theta h) = y + h * sum_i k_i * (P[i] @ [theta, theta^2, theta^3, theta^4])
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass
class RKResult:
    t: float
    y: np.ndarray
    samples: np.ndarray | None = None
    n_steps: int = 0
    n_rejected: int = 0
    n_feval: int = 0
    extra: dict = field(default_factory=dict)


def _error_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.max(np.abs(err) / scale)) if err.size else 0.0


def initial_step(f, t0, y0, f0, direction, rtol, atol, order=5):
    """Hairer-Norsett-Wanner starting step heuristic."""
    scale = atol + np.abs(y0) * rtol
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, y1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / order)
    return min(100 * h0, h1)


def dopri5(f, t0, y0, t_end, rtol=1e-6, atol=1e-9, h0=None, t_eval=None,
           max_steps=100_000, h_min=1e-12, on_accept=None):
    """Integrate y' = f(t, y) from ``t0`` to ``t_end``.

    Parameters
    ----------
    f : callable(t, y) -> ndarray
    t_eval : optional increasing array of output times inside [t0, t_end];
        sampled with the 4th-order continuous extension.
    on_accept : optional callable(t, y) -> y applied to every accepted state
        (used for clamping). Return the same object when nothing changed;
        a new array replaces the state and forces a fresh derivative.

    Raises
    ------
    StepSizeUnderflow
        if the controller asks for a step below ``h_min``.
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    span = t_end - t0
    direction = 1.0 if span >= 0 else -1.0
    samples = None
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        samples = np.empty((len(t_eval),) + y.shape)
        i_eval = 0
        while i_eval < len(t_eval) and t_eval[i_eval] == t:
            samples[i_eval] = y
            i_eval += 1
    if span == 0:
        return RKResult(t, y, samples)

    k = np.empty((7,) + y.shape)
    k[0] = f(t, y)
    n_feval = 1
    if h0 is None:
        h = initial_step(f, t, y, k[0], direction, rtol, atol)
        n_feval += 1
    else:
        h = abs(h0)
    n_steps = n_rejected = 0
    while direction * (t_end - t) > 0:
        if n_steps + n_rejected >= max_steps:
            raise RuntimeError(f"dopri5 exceeded {max_steps} steps at t={t}")
        h = min(h, abs(t_end - t))
        if h < h_min:
            raise StepSizeUnderflow(f"step size {h:.3e} below {h_min:.1e} at t={t:.6g}")
        hs = h * direction
        for s in range(1, 7):
            dy = A[s][0] * k[0]
            for j in range(1, s):
                if A[s][j] != 0.0:
                    dy = dy + A[s][j] * k[j]
            k[s] = f(t + C[s] * hs, y + hs * dy)
        n_feval += 6
        y_new = y + hs * np.tensordot(B[:6], k[:6], axes=1)
        err = hs * np.tensordot(E, k, axes=1)
        err_norm = _error_norm(err, y, y_new, rtol, atol)
        if not np.isfinite(err_norm):
            err_norm = np.inf
        if err_norm <= 1.0:
            t_new = t + hs
            if samples is not None:
                while i_eval < len(t_eval) and direction * (t_eval[i_eval] - t_new) <= 0:
                    theta = (t_eval[i_eval] - t) / hs
                    powers = np.array([theta, theta ** 2, theta ** 3, theta ** 4])
                    samples[i_eval] = y + hs * np.tensordot(P @ powers, k, axes=1)
                    i_eval += 1
            y_acc = y_new if on_accept is None else on_accept(t_new, y_new)
            if y_acc is y_new:
                k[0] = k[6]
            else:
                # state was modified, FSAL stage is stale
                y_new = y_acc
                k[0] = f(t_new, y_new)
                n_feval += 1
            t, y = t_new, y_new
            n_steps += 1
            fac = FAC_MAX if err_norm == 0 else min(FAC_MAX, SAFETY * err_norm ** -0.2)
            h = h * max(fac, 1.0) if err_norm < 1 else h
        else:
            n_rejected += 1
            fac = FAC_MIN if not np.isfinite(err_norm) else max(FAC_MIN, SAFETY * err_norm ** -0.2)
            h = h * fac
    return RKResult(t, y, samples, n_steps, n_rejected, n_feval)
