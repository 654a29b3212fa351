"""Pure numpy kernels: topic EM statistics, D-optimal gains, MNIR sweeps.

These are the reference implementations; the compiled backend in ``_core``
must match them bit-for-bit in structure (same update order, same clamps)
so results agree to floating-point noise.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def topic_em_stats(indptr, indices, data, omega, theta, theta_stat, omega_stat):
    """One E-step accumulation pass over the nonzeros of a CSR count matrix.

    For each stored count x_ij, responsibilities r_ijk are proportional to
    omega_ik * theta_kj.  Adds x_ij * r_ijk into ``omega_stat`` (n, K) and
    ``theta_stat`` (K, p) in place and returns the multinomial log-likelihood
    sum(x_ij * log(sum_k omega_ik theta_kj)).
    """
    n, K = omega.shape
    p = theta.shape[1]
    # denom per nonzero: sum_k omega[row(e), k] * theta[k, col(e)]
    rows = np.repeat(np.arange(n), np.diff(indptr))
    denom = np.einsum("ek,ke->e", omega[rows], theta[:, indices])
    denom = np.maximum(denom, 1e-300)
    loglik = float(np.dot(data, np.log(np.maximum(denom, 1e-12))))
    scaled = sp.csr_matrix((data / denom, indices, indptr), shape=(n, p))
    omega_stat += omega * (scaled @ theta.T)
    theta_stat += theta * (omega.T @ scaled)
    return loglik


def quad_form_gains(weights, a_inv, out):
    """Row-wise quadratic forms w_i' A^{-1} w_i, written into ``out``."""
    np.einsum("ij,jk,ik->i", weights, a_inv, weights, out=out)
    return out


def _penalty(value, lam, tau):
    if tau > 0.0:
        return lam * np.log1p(abs(value) / tau)
    return lam * abs(value)


def _penalty_slope(value, lam, tau):
    if tau > 0.0:
        return lam / (tau + abs(value))
    return lam


def _coordinate_update(x, m, y, subj, exp_eta, z, j, row, is_phi, value,
                       lam, tau, ridge, step_cap):
    """Single-coordinate proximal Newton step with exact-objective halving.

    Mutates ``exp_eta[:, j]`` and ``z`` on the active cells when a step is
    accepted and returns the new coordinate value (exact 0.0 preserved for
    thresholded penalized coordinates).
    """
    if row == 0:
        cells = slice(None)
    else:
        cells = np.flatnonzero(subj == row)
    d = y[cells] if is_phi else 1.0
    q = exp_eta[cells, j] / z[cells]
    grad = float(np.sum(d * (m[cells] * q - x[cells, j])))
    curv = float(np.sum(d * d * m[cells] * q * (1.0 - q)))
    h = max(curv, 1e-12)
    if is_phi:
        zj = value - grad / h
        thresh = _penalty_slope(value, lam, tau) / h
        if abs(zj) > thresh:
            proposal = zj - thresh if zj > 0.0 else zj + thresh
        else:
            proposal = 0.0
    else:
        grad += ridge * value
        h = max(curv + ridge, 1e-12)
        proposal = value - grad / h
    delta = proposal - value
    if delta == 0.0:
        return value
    if abs(delta) > step_cap:
        proposal = value + (step_cap if delta > 0.0 else -step_cap)
        delta = proposal - value
    candidate = proposal
    dx = float(np.sum(d * x[cells, j]))
    for _ in range(30):
        delta = candidate - value
        mult = np.exp(d * delta) if is_phi else np.exp(delta)
        z_new = z[cells] + exp_eta[cells, j] * (mult - 1.0)
        d_obj = float(np.dot(m[cells], np.log(z_new / z[cells]))) - dx * delta
        if is_phi:
            d_obj += _penalty(candidate, lam, tau) - _penalty(value, lam, tau)
        else:
            d_obj += 0.5 * ridge * (candidate * candidate - value * value)
        if d_obj <= 0.0:
            exp_eta[cells, j] = exp_eta[cells, j] * mult
            z[cells] = z_new
            return candidate
        candidate = value + 0.5 * delta
    return value


def mnir_sweep(x, m, y, subj, alpha, phi, exp_eta, z, lam, tau, ridge, step_cap):
    """One full coordinate-descent sweep over all tokens and parameter rows.

    Row 0 holds the shared intercept/loading; row s > 0 applies only to cells
    with ``subj == s``.  For each token the order is alpha then phi, rows in
    increasing order.  ``tau <= 0`` selects a plain L1 penalty with rate
    ``lam``.  Returns the largest absolute accepted step.
    """
    p = x.shape[1]
    n_rows = alpha.shape[0]
    max_step = 0.0
    for j in range(p):
        for row in range(n_rows):
            old = alpha[row, j]
            new = _coordinate_update(x, m, y, subj, exp_eta, z, j, row, False,
                                     old, lam, tau, ridge, step_cap)
            alpha[row, j] = new
            max_step = max(max_step, abs(new - old))
            old = phi[row, j]
            new = _coordinate_update(x, m, y, subj, exp_eta, z, j, row, True,
                                     old, lam, tau, ridge, step_cap)
            phi[row, j] = new
            max_step = max(max_step, abs(new - old))
    return max_step
