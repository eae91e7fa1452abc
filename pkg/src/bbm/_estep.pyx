# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-location posterior kernel (see ``_estep_py`` for the contract)."""

import numpy as np
from cython.parallel cimport parallel, prange
from libc.math cimport isfinite, log, sqrt
from libc.stdlib cimport free, malloc

from .errors import NumericalError


cdef int _one(Py_ssize_t Q, Py_ssize_t v,
              const double[:, ::1] G, const double[:, ::1] C,
              const double[::1] tau2, const double[:, ::1] sigma2,
              double[:, ::1] delta, double[:, :, ::1] Sigma, double[::1] kl,
              double* P, double* w, char* fr) noexcept nogil:
    cdef double t = tau2[v]
    cdef double s, acc, logdetP = 0.0, logdetD = 0.0, trace = 0.0, quad = 0.0
    cdef Py_ssize_t i, j, k, col, nfree = 0

    for i in range(Q):
        s = sigma2[i, v]
        fr[i] = s > 0.0 and isfinite(1.0 / s)
        if fr[i]:
            nfree += 1
    for i in range(Q):
        for j in range(Q):
            if fr[i] and fr[j]:
                P[i * Q + j] = G[i, j] / t
            else:
                P[i * Q + j] = 0.0
        if fr[i]:
            P[i * Q + i] += 1.0 / sigma2[i, v]
        else:
            P[i * Q + i] = 1.0

    # in-place lower Cholesky
    for j in range(Q):
        acc = P[j * Q + j]
        for k in range(j):
            acc -= P[j * Q + k] * P[j * Q + k]
        if acc <= 0.0:
            return -1
        acc = sqrt(acc)
        P[j * Q + j] = acc
        if fr[j]:
            logdetP += 2.0 * log(acc)
        for i in range(j + 1, Q):
            s = P[i * Q + j]
            for k in range(j):
                s -= P[i * Q + k] * P[j * Q + k]
            P[i * Q + j] = s / acc

    # Sigma = P^{-1}, one column at a time
    for col in range(Q):
        for i in range(Q):
            s = 1.0 if i == col else 0.0
            for k in range(i):
                s -= P[i * Q + k] * w[k]
            w[i] = s / P[i * Q + i]
        for i in range(Q - 1, -1, -1):
            s = w[i]
            for k in range(i + 1, Q):
                s -= P[k * Q + i] * w[k]
            w[i] = s / P[i * Q + i]
        for i in range(Q):
            Sigma[v, i, col] = w[i]
    for i in range(Q):
        for j in range(i + 1, Q):
            s = 0.5 * (Sigma[v, i, j] + Sigma[v, j, i])
            Sigma[v, i, j] = s
            Sigma[v, j, i] = s

    for i in range(Q):
        acc = 0.0
        for j in range(Q):
            if fr[j]:
                acc += Sigma[v, i, j] * (C[j, v] / t)
        delta[i, v] = acc if fr[i] else 0.0
    for i in range(Q):
        if not fr[i]:
            for j in range(Q):
                Sigma[v, i, j] = 0.0
                Sigma[v, j, i] = 0.0
        else:
            trace += Sigma[v, i, i] / sigma2[i, v]
            quad += delta[i, v] * delta[i, v] / sigma2[i, v]
            logdetD += log(sigma2[i, v])
    kl[v] = 0.5 * (trace + quad - nfree + logdetD + logdetP)
    return 0


def estep(G, C, tau2, sigma2, int threads=1):
    cdef const double[:, ::1] G_ = np.ascontiguousarray(G, dtype=np.float64)
    cdef const double[:, ::1] C_ = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[::1] t_ = np.ascontiguousarray(tau2, dtype=np.float64)
    cdef const double[:, ::1] s_ = np.ascontiguousarray(sigma2, dtype=np.float64)
    cdef Py_ssize_t Q = C_.shape[0], V = C_.shape[1], v
    delta = np.empty((Q, V))
    Sigma = np.empty((V, Q, Q))
    kl = np.empty(V)
    status = np.zeros(V, dtype=np.intc)
    cdef double[:, ::1] d_ = delta
    cdef double[:, :, ::1] S_ = Sigma
    cdef double[::1] k_ = kl
    cdef int[::1] st = status
    cdef double* P
    cdef double* w
    cdef char* fr
    with nogil, parallel(num_threads=max(threads, 1)):
        P = <double*> malloc(Q * Q * sizeof(double))
        w = <double*> malloc(Q * sizeof(double))
        fr = <char*> malloc(Q * sizeof(char))
        for v in prange(V, schedule="static"):
            st[v] = _one(Q, v, G_, C_, t_, s_, d_, S_, k_, P, w, fr)
        free(P)
        free(w)
        free(fr)
    if status.min() < 0:
        raise NumericalError("posterior precision is not positive definite")
    return delta, Sigma, kl
