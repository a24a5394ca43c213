"""Independent reference solvers used by the tests.

Nothing here imports the package's solver code; only plain parameter
values cross the boundary.
"""

import numpy as np


def _edge_rhs(n, flux, k):
    """dn/dx on the edge for a steady flux: a n' = -(J + h(n))."""
    m = k.gamma1 * n * n / (k.beta - k.gamma2 * n)
    w = (1.0 - k.f_frac) * (k.v_a * (1.0 + k.delta * n) * (1.0 - k.epsilon * m) - k.v_r)
    return -(flux - w * n) / k.diffusivity


def _edge_rhs_dn(n, flux, k, step=1e-30):
    # complex step: exact to rounding for this analytic function
    return _edge_rhs(n + 1j * step, flux, k).imag / step


def fd_edge_bvp(n_i, n_j, k, length=1.0, n_points=200, tol=1e-13, max_iter=100):
    """Hermite-Simpson collocation of the steady edge problem, damped Newton.

    Unknowns are n at ``n_points`` uniform nodes plus the flux J. Boundary
    rows impose J = mu2 N_i - mu1 n(0) and J = mu1 n(L) - mu2 N_j with
    mu = mu_raw / phi. Returns (n_left, n_right, J, profile).
    """
    mu1, mu2 = k.mu_release / k.phi, k.mu_uptake / k.phi
    x = np.linspace(0.0, length, n_points)
    h = x[1] - x[0]
    m = n_points - 1

    def residual(v):
        n, flux = v[:-1], v[-1]
        g = _edge_rhs(n, flux, k)
        mid = 0.5 * (n[:-1] + n[1:]) + h / 8 * (g[:-1] - g[1:])
        gm = _edge_rhs(mid, flux, k)
        r = np.empty(n_points + 1)
        r[:m] = n[1:] - n[:-1] - h / 6 * (g[:-1] + 4 * gm + g[1:])
        r[m] = flux - (mu2 * n_i - mu1 * n[0])
        r[m + 1] = flux - (mu1 * n[-1] - mu2 * n_j)
        return r

    def jacobian(v):
        n, flux = v[:-1], v[-1]
        g = _edge_rhs(n, flux, k)
        gn = _edge_rhs_dn(n, flux, k)
        gj = -1.0 / k.diffusivity
        mid = 0.5 * (n[:-1] + n[1:]) + h / 8 * (g[:-1] - g[1:])
        gmn = _edge_rhs_dn(mid, flux, k)
        dmid_a = 0.5 + h / 8 * gn[:-1]
        dmid_b = 0.5 - h / 8 * gn[1:]
        jac = np.zeros((n_points + 1, n_points + 1))
        idx = np.arange(m)
        jac[idx, idx] = -1.0 - h / 6 * (gn[:-1] + 4 * gmn * dmid_a)
        jac[idx, idx + 1] = 1.0 - h / 6 * (gn[1:] + 4 * gmn * dmid_b)
        # dg/dJ is constant, so J drops out of the midpoint and each row gets -h dg/dJ
        jac[idx, -1] = -h * gj
        jac[m, 0], jac[m, -1] = mu1, 1.0
        jac[m + 1, -2], jac[m + 1, -1] = -mu1, 1.0
        return jac

    n_mean = 0.5 * (mu2 / mu1) * (n_i + n_j)
    v = np.concatenate([np.full(n_points, n_mean), [0.5 * mu2 * (n_i - n_j)]])
    r = residual(v)
    scale = 1.0 + mu2 * max(n_i, n_j)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol * scale:
            break
        dv = np.linalg.solve(jacobian(v), -r)
        step, norm0 = 1.0, np.linalg.norm(r)
        while step > 1e-8:
            trial = v + step * dv
            rt = residual(trial)
            if np.all(np.isfinite(rt)) and np.linalg.norm(rt) < (1 - 1e-4 * step) * norm0:
                break
            step *= 0.5
        v, r = trial, rt
    else:
        raise RuntimeError("finite-difference oracle did not converge")
    return v[0], v[-2], v[-1], v[:-1]


def naive_dft(z):
    """O(V^2) DFT along axis 0, returned as (real, imag)."""
    v = z.shape[0]
    j = np.arange(v)
    ang = -2.0 * np.pi * np.outer(j, j) / v
    return np.cos(ang) @ z, np.sin(ang) @ z


def metrics_reference(pred, truth):
    """Straightforward loop-based RMSE / MAE / relative L2."""
    se = ae = tt = 0.0
    count = 0
    for p, t in zip(np.ravel(pred).tolist(), np.ravel(truth).tolist()):
        se += (p - t) ** 2
        ae += abs(p - t)
        tt += t * t
        count += 1
    return (se / count) ** 0.5, ae / count, (se ** 0.5) / (tt ** 0.5)
