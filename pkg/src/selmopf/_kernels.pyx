# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled network kernels; same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos

cnp.import_array()


def injections(const double[:, ::1] g, const double[:, ::1] b,
               const double[::1] vm, const double[::1] va):
    cdef Py_ssize_t n = vm.shape[0], i, j
    cdef double c, s, vv, sp, sq
    p = np.empty(n)
    q = np.empty(n)
    cdef double[::1] pv = p, qv = q
    for i in range(n):
        sp = 0.0
        sq = 0.0
        for j in range(n):
            if g[i, j] == 0.0 and b[i, j] == 0.0:
                continue
            c = cos(va[i] - va[j])
            s = sin(va[i] - va[j])
            vv = vm[i] * vm[j]
            sp += vv * (g[i, j] * c + b[i, j] * s)
            sq += vv * (g[i, j] * s - b[i, j] * c)
        pv[i] = sp
        qv[i] = sq
    return p, q


def injection_jacobian(const double[:, ::1] g, const double[:, ::1] b,
                       const double[::1] vm, const double[::1] va):
    cdef Py_ssize_t n = vm.shape[0], i, j
    cdef double c, s, vv, gc_bs, gs_bc, sp, sq
    p = np.empty(n)
    q = np.empty(n)
    dp_dva = np.zeros((n, n))
    dp_dvm = np.zeros((n, n))
    dq_dva = np.zeros((n, n))
    dq_dvm = np.zeros((n, n))
    cdef double[::1] pv = p, qv = q
    cdef double[:, ::1] pa = dp_dva, pm = dp_dvm, qa = dq_dva, qm = dq_dvm
    for i in range(n):
        sp = 0.0
        sq = 0.0
        for j in range(n):
            if g[i, j] == 0.0 and b[i, j] == 0.0:
                continue
            c = cos(va[i] - va[j])
            s = sin(va[i] - va[j])
            gc_bs = g[i, j] * c + b[i, j] * s
            gs_bc = g[i, j] * s - b[i, j] * c
            vv = vm[i] * vm[j]
            sp += vv * gc_bs
            sq += vv * gs_bc
            if j != i:
                pa[i, j] = vv * gs_bc
                qa[i, j] = -vv * gc_bs
                pm[i, j] = vm[i] * gc_bs
                qm[i, j] = vm[i] * gs_bc
        pv[i] = sp
        qv[i] = sq
    for i in range(n):
        pa[i, i] = -qv[i] - b[i, i] * vm[i] * vm[i]
        qa[i, i] = pv[i] - g[i, i] * vm[i] * vm[i]
        pm[i, i] = pv[i] / vm[i] + g[i, i] * vm[i]
        qm[i, i] = qv[i] / vm[i] - b[i, i] * vm[i]
    return p, q, dp_dva, dp_dvm, dq_dva, dq_dvm


def injection_hessian(const double[:, ::1] g, const double[:, ::1] b,
                      const double[::1] vm, const double[::1] va,
                      const double[::1] lam_p, const double[::1] lam_q):
    cdef Py_ssize_t n = vm.shape[0], i, j
    cdef double c, s, gc_bs, gs_bc, a, a1, m
    h_aa = np.zeros((n, n))
    h_av = np.zeros((n, n))
    h_vv = np.zeros((n, n))
    cdef double[:, ::1] haa = h_aa, hav = h_av, hvv = h_vv
    for i in range(n):
        for j in range(n):
            if j == i or (g[i, j] == 0.0 and b[i, j] == 0.0):
                continue
            c = cos(va[i] - va[j])
            s = sin(va[i] - va[j])
            gc_bs = g[i, j] * c + b[i, j] * s
            gs_bc = g[i, j] * s - b[i, j] * c
            a = lam_p[i] * gc_bs + lam_q[i] * gs_bc
            a1 = lam_q[i] * gc_bs - lam_p[i] * gs_bc
            m = vm[i] * vm[j] * a
            haa[i, j] += m
            haa[j, i] += m
            haa[i, i] -= m
            haa[j, j] -= m
            hav[i, j] += vm[i] * a1
            hav[j, i] -= vm[j] * a1
            hav[i, i] += vm[j] * a1
            hav[j, j] -= vm[i] * a1
            hvv[i, j] += a
            hvv[j, i] += a
        hvv[i, i] = 2.0 * (lam_p[i] * g[i, i] - lam_q[i] * b[i, i])
    return h_aa, h_av, h_vv


def branch_flows(const cnp.intp_t[::1] f, const cnp.intp_t[::1] t,
                 const double[::1] gff, const double[::1] bff,
                 const double[::1] gft, const double[::1] bft,
                 const double[::1] vm, const double[::1] va):
    cdef Py_ssize_t nl = f.shape[0], k
    cdef double vf, vt, c, s, a, e, vv
    pf = np.empty(nl)
    qf = np.empty(nl)
    dpf = np.empty((nl, 4))
    cdef double[::1] pv = pf, qv = qf
    cdef double[:, ::1] dv = dpf
    for k in range(nl):
        vf = vm[f[k]]
        vt = vm[t[k]]
        c = cos(va[f[k]] - va[t[k]])
        s = sin(va[f[k]] - va[t[k]])
        a = gft[k] * c + bft[k] * s
        e = bft[k] * c - gft[k] * s
        vv = vf * vt
        pv[k] = vf * vf * gff[k] + vv * a
        qv[k] = -vf * vf * bff[k] + vv * (gft[k] * s - bft[k] * c)
        dv[k, 0] = vv * e
        dv[k, 1] = -vv * e
        dv[k, 2] = 2.0 * vf * gff[k] + vt * a
        dv[k, 3] = vf * a
    return pf, qf, dpf


def branch_hessian(const cnp.intp_t[::1] f, const cnp.intp_t[::1] t,
                   const double[::1] gff, const double[::1] gft, const double[::1] bft,
                   const double[::1] vm, const double[::1] va,
                   const double[::1] w, Py_ssize_t n):
    cdef Py_ssize_t nl = f.shape[0], k, i, j
    cdef double vf, vt, c, s, a, e, vva
    h_aa = np.zeros((n, n))
    h_av = np.zeros((n, n))
    h_vv = np.zeros((n, n))
    cdef double[:, ::1] haa = h_aa, hav = h_av, hvv = h_vv
    for k in range(nl):
        if w[k] == 0.0:
            continue
        i = f[k]
        j = t[k]
        vf = vm[i]
        vt = vm[j]
        c = cos(va[i] - va[j])
        s = sin(va[i] - va[j])
        a = w[k] * (gft[k] * c + bft[k] * s)
        e = w[k] * (bft[k] * c - gft[k] * s)
        vva = vf * vt * a
        haa[i, i] -= vva
        haa[j, j] -= vva
        haa[i, j] += vva
        haa[j, i] += vva
        hav[i, i] += vt * e
        hav[i, j] += vf * e
        hav[j, i] -= vt * e
        hav[j, j] -= vf * e
        hvv[i, i] += 2.0 * w[k] * gff[k]
        hvv[i, j] += a
        hvv[j, i] += a
    return h_aa, h_av, h_vv
