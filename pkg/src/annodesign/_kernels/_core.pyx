# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: topic EM statistics, D-optimal gains, MNIR sweeps.

Contracts match ``_pure`` exactly; see that module for documentation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p

cnp.import_array()


def topic_em_stats(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                   double[::1] data, double[:, ::1] omega, double[:, ::1] theta,
                   double[:, ::1] theta_stat, double[:, ::1] omega_stat):
    cdef Py_ssize_t n = omega.shape[0]
    cdef Py_ssize_t K = omega.shape[1]
    cdef Py_ssize_t i, e, j, k
    cdef double denom, xval, r
    cdef double loglik = 0.0
    for i in range(n):
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            xval = data[e]
            denom = 0.0
            for k in range(K):
                denom += omega[i, k] * theta[k, j]
            if denom < 1e-300:
                denom = 1e-300
            loglik += xval * log(denom if denom > 1e-12 else 1e-12)
            for k in range(K):
                r = xval * omega[i, k] * theta[k, j] / denom
                theta_stat[k, j] += r
                omega_stat[i, k] += r
    return loglik


def quad_form_gains(double[:, ::1] weights, double[:, ::1] a_inv, double[::1] out):
    cdef Py_ssize_t m = weights.shape[0]
    cdef Py_ssize_t K = weights.shape[1]
    cdef Py_ssize_t i, k, l
    cdef double acc, wik
    for i in range(m):
        acc = 0.0
        for k in range(K):
            wik = weights[i, k]
            for l in range(K):
                acc += wik * a_inv[k, l] * weights[i, l]
        out[i] = acc
    return np.asarray(out)


cdef inline double _pen(double v, double lam, double tau) noexcept nogil:
    if tau > 0.0:
        return lam * log1p(fabs(v) / tau)
    return lam * fabs(v)


cdef inline double _pen_slope(double v, double lam, double tau) noexcept nogil:
    if tau > 0.0:
        return lam / (tau + fabs(v))
    return lam


cdef double _coordinate_update(double[:, ::1] x, double[::1] m, double[::1] y,
                               cnp.int64_t[::1] subj, double[:, ::1] exp_eta,
                               double[::1] z, Py_ssize_t j, Py_ssize_t row,
                               bint is_phi, double value, double lam, double tau,
                               double ridge, double step_cap) noexcept nogil:
    cdef Py_ssize_t C = x.shape[0]
    cdef Py_ssize_t c, attempt
    cdef double grad = 0.0
    cdef double curv = 0.0
    cdef double q, d, h, zj, thresh, proposal, delta
    cdef double candidate, d_obj, mult, z_new, new_val
    for c in range(C):
        if row != 0 and subj[c] != row:
            continue
        d = y[c] if is_phi else 1.0
        q = exp_eta[c, j] / z[c]
        grad += d * (m[c] * q - x[c, j])
        curv += d * d * m[c] * q * (1.0 - q)
    h = curv if curv > 1e-12 else 1e-12
    if is_phi:
        zj = value - grad / h
        thresh = _pen_slope(value, lam, tau) / h
        if fabs(zj) > thresh:
            proposal = zj - thresh if zj > 0.0 else zj + thresh
        else:
            proposal = 0.0
    else:
        grad += ridge * value
        h = curv + ridge
        if h < 1e-12:
            h = 1e-12
        proposal = value - grad / h
    delta = proposal - value
    if delta == 0.0:
        return value
    if fabs(delta) > step_cap:
        proposal = value + (step_cap if delta > 0.0 else -step_cap)
        delta = proposal - value
    candidate = proposal
    for attempt in range(30):
        delta = candidate - value
        d_obj = 0.0
        for c in range(C):
            if row != 0 and subj[c] != row:
                continue
            d = y[c] if is_phi else 1.0
            mult = exp(d * delta)
            z_new = z[c] + exp_eta[c, j] * (mult - 1.0)
            d_obj += m[c] * log(z_new / z[c]) - d * x[c, j] * delta
        if is_phi:
            d_obj += _pen(candidate, lam, tau) - _pen(value, lam, tau)
        else:
            d_obj += 0.5 * ridge * (candidate * candidate - value * value)
        if d_obj <= 0.0:
            for c in range(C):
                if row != 0 and subj[c] != row:
                    continue
                d = y[c] if is_phi else 1.0
                mult = exp(d * delta)
                z[c] = z[c] + exp_eta[c, j] * (mult - 1.0)
                exp_eta[c, j] = exp_eta[c, j] * mult
            return candidate
        candidate = value + 0.5 * delta
    return value


def mnir_sweep(double[:, ::1] x, double[::1] m, double[::1] y,
               cnp.int64_t[::1] subj, double[:, ::1] alpha, double[:, ::1] phi,
               double[:, ::1] exp_eta, double[::1] z,
               double lam, double tau, double ridge, double step_cap):
    cdef Py_ssize_t p = x.shape[1]
    cdef Py_ssize_t n_rows = alpha.shape[0]
    cdef Py_ssize_t j, row
    cdef double max_step = 0.0
    cdef double old, new
    with nogil:
        for j in range(p):
            for row in range(n_rows):
                old = alpha[row, j]
                new = _coordinate_update(x, m, y, subj, exp_eta, z, j, row, 0,
                                         old, lam, tau, ridge, step_cap)
                alpha[row, j] = new
                if fabs(new - old) > max_step:
                    max_step = fabs(new - old)
                old = phi[row, j]
                new = _coordinate_update(x, m, y, subj, exp_eta, z, j, row, 1,
                                         old, lam, tau, ridge, step_cap)
                phi[row, j] = new
                if fabs(new - old) > max_step:
                    max_step = fabs(new - old)
    return max_step
