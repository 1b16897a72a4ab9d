# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled likelihood kernel; contract mirrors ``_kernel_py.nll_and_grad``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport erfc, exp, log, log1p, sqrt

cnp.import_array()

cdef double SQRT1_2 = 0.7071067811865476
cdef double LOG_SQRT_2PI = 0.9189385332046727


cdef inline double log_std_normal_cdf(double z) nogil:
    # tail-accurate log(Phi(z)): take the log in whichever half the value
    # is small, and log1p of the tiny complement in the other
    cdef double q
    if z > 0.0:
        q = 0.5 * erfc(z * SQRT1_2)
        return log1p(-q)
    return log(0.5 * erfc(-z * SQRT1_2))


def nll_and_grad(
    cnp.ndarray[cnp.float64_t, ndim=2] params,
    cnp.ndarray[cnp.int32_t, ndim=1] codec_left,
    cnp.ndarray[cnp.float64_t, ndim=1] r_left,
    cnp.ndarray[cnp.int32_t, ndim=1] codec_right,
    cnp.ndarray[cnp.float64_t, ndim=1] r_right,
    cnp.ndarray[cnp.uint8_t, ndim=1] boosted,
    cnp.ndarray[cnp.float64_t, ndim=1] n_left,
    cnp.ndarray[cnp.float64_t, ndim=1] n_right,
    double k,
    double eps=1e-12,
    bint want_grad=True,
):
    """Return (nll, grad) with grad of shape (K, 4), or (nll, None)."""
    cdef Py_ssize_t n = codec_left.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad_arr = None
    cdef double[:, :] grad = None
    if want_grad:
        grad_arr = np.zeros_like(params)
        grad = grad_arr

    cdef double[:, :] P = params
    cdef double nll = 0.0
    cdef double log_eps = log(eps)
    cdef double log_1m_eps = log1p(-eps)
    cdef Py_ssize_t i
    cdef int cl, cr, b
    cdef bint clamp_lo, clamp_hi
    cdef double dl, dr, z, lp, lq, log_p, log_q, log_phi, gz, gd
    cdef double el, er, chain_l, chain_r
    cdef double alpha, beta, g1, g2

    for i in range(n):
        cl = codec_left[i]
        cr = codec_right[i]
        b = boosted[i]

        el = 0.0
        er = 0.0
        chain_l = 1.0
        chain_r = 1.0
        dl = 0.0
        dr = 0.0
        if cl >= 0:
            alpha = P[cl, 0]; beta = P[cl, 1]; g1 = P[cl, 2]; g2 = P[cl, 3]
            el = alpha * exp(-beta * r_left[i])
            if b:
                dl = g1 * el + g2 * el * el
                chain_l = g1 + 2.0 * g2 * el
            else:
                dl = el
        if cr >= 0:
            alpha = P[cr, 0]; beta = P[cr, 1]; g1 = P[cr, 2]; g2 = P[cr, 3]
            er = alpha * exp(-beta * r_right[i])
            if b:
                dr = g1 * er + g2 * er * er
                chain_r = g1 + 2.0 * g2 * er
            else:
                dr = er

        z = k * (dl - dr)
        lp = log_std_normal_cdf(z)
        lq = log_std_normal_cdf(-z)
        clamp_lo = lp < log_eps      # p below eps
        clamp_hi = lq < log_eps      # p above 1 - eps
        log_p = log_eps if clamp_lo else (log_1m_eps if clamp_hi else lp)
        log_q = log_eps if clamp_hi else (log_1m_eps if clamp_lo else lq)
        nll -= n_left[i] * log_p + n_right[i] * log_q

        if not want_grad:
            continue
        if clamp_lo or clamp_hi:
            continue  # clamped row: objective is flat here
        log_phi = -0.5 * z * z - LOG_SQRT_2PI
        gz = -n_left[i] * exp(log_phi - log_p) + n_right[i] * exp(log_phi - log_q)
        gd = k * gz
        if cl >= 0:
            alpha = P[cl, 0]
            grad[cl, 0] += gd * chain_l * el / alpha
            grad[cl, 1] += gd * (-chain_l * r_left[i] * el)
            if b:
                grad[cl, 2] += gd * el
                grad[cl, 3] += gd * el * el
        if cr >= 0:
            alpha = P[cr, 0]
            grad[cr, 0] -= gd * chain_r * er / alpha
            grad[cr, 1] -= gd * (-chain_r * r_right[i] * er)
            if b:
                grad[cr, 2] -= gd * er
                grad[cr, 3] -= gd * er * er

    if want_grad:
        return nll, grad_arr
    return nll, None
