"""Pure-numpy network kernels (fallback for the compiled ``_kernels``).

All functions work on dense real conductance/susceptance matrices and polar
voltages.  Hessian blocks are returned as ``(h_aa, h_av, h_vv)`` where
``h_av[i, j]`` is the mixed derivative with respect to ``theta_i`` and
``v_j``.
"""

import numpy as np


def _trig(va):
    d = va[:, None] - va[None, :]
    return np.cos(d), np.sin(d)


def injections(g, b, vm, va):
    c, s = _trig(va)
    vv = np.outer(vm, vm)
    p = np.sum(vv * (g * c + b * s), axis=1)
    q = np.sum(vv * (g * s - b * c), axis=1)
    return p, q


def injection_jacobian(g, b, vm, va):
    """Injections and their polar Jacobian blocks.

    Returns ``p, q, dp_dva, dp_dvm, dq_dva, dq_dvm``.
    """
    c, s = _trig(va)
    gc_bs = g * c + b * s
    gs_bc = g * s - b * c
    vv = np.outer(vm, vm)
    p = np.sum(vv * gc_bs, axis=1)
    q = np.sum(vv * gs_bc, axis=1)
    gd = np.diag(g)
    bd = np.diag(b)

    dp_dva = vv * gs_bc
    np.fill_diagonal(dp_dva, -q - bd * vm * vm)
    dq_dva = -vv * gc_bs
    np.fill_diagonal(dq_dva, p - gd * vm * vm)
    dp_dvm = vm[:, None] * gc_bs
    np.fill_diagonal(dp_dvm, p / vm + gd * vm)
    dq_dvm = vm[:, None] * gs_bc
    np.fill_diagonal(dq_dvm, q / vm - bd * vm)
    return p, q, dp_dva, dp_dvm, dq_dva, dq_dvm


def injection_hessian(g, b, vm, va, lam_p, lam_q):
    """Hessian of ``lam_p @ p + lam_q @ q`` with respect to ``(va, vm)``."""
    c, s = _trig(va)
    gc_bs = g * c + b * s
    gs_bc = g * s - b * c
    a = lam_p[:, None] * gc_bs + lam_q[:, None] * gs_bc
    a1 = lam_q[:, None] * gc_bs - lam_p[:, None] * gs_bc
    np.fill_diagonal(a, 0.0)
    np.fill_diagonal(a1, 0.0)

    m = np.outer(vm, vm) * a
    h_aa = m + m.T
    h_aa[np.diag_indices_from(h_aa)] -= m.sum(axis=1) + m.sum(axis=0)

    h_av = vm[:, None] * (a1 - a1.T)
    h_av[np.diag_indices_from(h_av)] = a1 @ vm - a1.T @ vm

    h_vv = a + a.T
    h_vv[np.diag_indices_from(h_vv)] = 2.0 * (lam_p * np.diag(g) - lam_q * np.diag(b))
    return h_aa, h_av, h_vv


def branch_flows(f, t, gff, bff, gft, bft, vm, va):
    """From-side flows and the partials of ``pf``.

    Returns ``pf, qf, dpf`` with ``dpf[:, k]`` the derivative with respect to
    ``(theta_f, theta_t, v_f, v_t)`` for ``k = 0..3``.
    """
    vf = vm[f]
    vt = vm[t]
    d = va[f] - va[t]
    c = np.cos(d)
    s = np.sin(d)
    a = gft * c + bft * s
    e = bft * c - gft * s
    vv = vf * vt
    pf = vf * vf * gff + vv * a
    qf = -vf * vf * bff + vv * (gft * s - bft * c)
    dpf = np.empty((len(f), 4))
    dpf[:, 0] = vv * e
    dpf[:, 1] = -vv * e
    dpf[:, 2] = 2.0 * vf * gff + vt * a
    dpf[:, 3] = vf * a
    return pf, qf, dpf


def branch_hessian(f, t, gff, gft, bft, vm, va, w, n):
    """Hessian of ``w @ pf`` with respect to ``(va, vm)``."""
    vf = vm[f]
    vt = vm[t]
    d = va[f] - va[t]
    c = np.cos(d)
    s = np.sin(d)
    a = w * (gft * c + bft * s)
    e = w * (bft * c - gft * s)
    vva = vf * vt * a
    h_aa = np.zeros((n, n))
    h_av = np.zeros((n, n))
    h_vv = np.zeros((n, n))
    np.add.at(h_aa, (f, f), -vva)
    np.add.at(h_aa, (t, t), -vva)
    np.add.at(h_aa, (f, t), vva)
    np.add.at(h_aa, (t, f), vva)
    np.add.at(h_av, (f, f), vt * e)
    np.add.at(h_av, (f, t), vf * e)
    np.add.at(h_av, (t, f), -vt * e)
    np.add.at(h_av, (t, t), -vf * e)
    np.add.at(h_vv, (f, f), 2.0 * w * gff)
    np.add.at(h_vv, (f, t), a)
    np.add.at(h_vv, (t, f), a)
    return h_aa, h_av, h_vv
