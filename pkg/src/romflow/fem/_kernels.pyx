# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled element kernels.

Same interface and same scalar evaluation order as ``_kernels_py`` (see
that module for the discrete model); built with floating-point
contraction disabled so both backends accumulate identically ordered
rounding.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

backend_name = "compiled"


cdef inline void _residual_one(
    double t0, double t1, double t2,
    double p0, double p1, double p2,
    double vx0, double vy0, double vx1, double vy1, double vx2, double vy2,
    double s0, double s1, double s2,
    double area,
    double g0x, double g0y, double g1x, double g1y, double g2x, double g2y,
    double dt, double theta, double nu, double kappa,
    double* out,
) noexcept nogil:
    cdef double m = area / 12.0
    cdef double d0 = t0 - p0
    cdef double d1 = t1 - p1
    cdef double d2 = t2 - p2
    cdef double dsum = (d0 + d1) + d2
    cdef double ssum = (s0 + s1) + s2
    cdef double vsx = (vx0 + vx1) + vx2
    cdef double vsy = (vy0 + vy1) + vy2
    cdef double gutx = (t0 * g0x + t1 * g1x) + t2 * g2x
    cdef double guty = (t0 * g0y + t1 * g1y) + t2 * g2y
    cdef double gupx = (p0 * g0x + p1 * g1x) + p2 * g2x
    cdef double gupy = (p0 * g0y + p1 * g1y) + p2 * g2y
    cdef double vb0x = m * (vx0 + vsx)
    cdef double vb0y = m * (vy0 + vsy)
    cdef double vb1x = m * (vx1 + vsx)
    cdef double vb1y = m * (vy1 + vsy)
    cdef double vb2x = m * (vx2 + vsx)
    cdef double vb2y = m * (vy2 + vsy)
    cdef double lt0 = (nu * area * (g0x * gutx + g0y * guty) + (vb0x * gutx + vb0y * guty)) \
        + kappa * (area / 3.0) * ((t0 * t0) * t0)
    cdef double lt1 = (nu * area * (g1x * gutx + g1y * guty) + (vb1x * gutx + vb1y * guty)) \
        + kappa * (area / 3.0) * ((t1 * t1) * t1)
    cdef double lt2 = (nu * area * (g2x * gutx + g2y * guty) + (vb2x * gutx + vb2y * guty)) \
        + kappa * (area / 3.0) * ((t2 * t2) * t2)
    cdef double lp0 = (nu * area * (g0x * gupx + g0y * gupy) + (vb0x * gupx + vb0y * gupy)) \
        + kappa * (area / 3.0) * ((p0 * p0) * p0)
    cdef double lp1 = (nu * area * (g1x * gupx + g1y * gupy) + (vb1x * gupx + vb1y * gupy)) \
        + kappa * (area / 3.0) * ((p1 * p1) * p1)
    cdef double lp2 = (nu * area * (g2x * gupx + g2y * gupy) + (vb2x * gupx + vb2y * gupy)) \
        + kappa * (area / 3.0) * ((p2 * p2) * p2)
    out[0] = ((m * (d0 + dsum) / dt + theta * lt0) + (1.0 - theta) * lp0) - m * (s0 + ssum)
    out[1] = ((m * (d1 + dsum) / dt + theta * lt1) + (1.0 - theta) * lp1) - m * (s1 + ssum)
    out[2] = ((m * (d2 + dsum) / dt + theta * lt2) + (1.0 - theta) * lp2) - m * (s2 + ssum)


def element_residuals(idx, conn, areas, grads, t, tp, vel, src, double dt, double theta,
                      double nu, double kappa):
    """Local theta-scheme residuals, (len(idx), 3), one row per listed element."""
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cn = np.ascontiguousarray(conn, dtype=np.int64)
    cdef double[::1] ar = np.ascontiguousarray(areas)
    cdef double[:, :, ::1] gr = np.ascontiguousarray(grads)
    cdef double[::1] tv = np.ascontiguousarray(t)
    cdef double[::1] pv = np.ascontiguousarray(tp)
    cdef double[:, ::1] vl = np.ascontiguousarray(vel)
    cdef double[::1] sv = np.ascontiguousarray(src)
    out_arr = np.empty((ix.shape[0], 3))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e
    cdef cnp.int64_t a0, a1, a2
    with nogil:
        for i in range(ix.shape[0]):
            e = ix[i]
            a0 = cn[e, 0]; a1 = cn[e, 1]; a2 = cn[e, 2]
            _residual_one(
                tv[a0], tv[a1], tv[a2], pv[a0], pv[a1], pv[a2],
                vl[a0, 0], vl[a0, 1], vl[a1, 0], vl[a1, 1], vl[a2, 0], vl[a2, 1],
                sv[a0], sv[a1], sv[a2],
                ar[e],
                gr[e, 0, 0], gr[e, 0, 1], gr[e, 1, 0], gr[e, 1, 1], gr[e, 2, 0], gr[e, 2, 1],
                dt, theta, nu, kappa, &out[i, 0])
    return out_arr


def element_jacobians(idx, conn, areas, grads, t, vel, double dt, double theta,
                      double nu, double kappa):
    """Local residual derivatives, (len(idx), 3, 3)."""
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cn = np.ascontiguousarray(conn, dtype=np.int64)
    cdef double[::1] ar = np.ascontiguousarray(areas)
    cdef double[:, :, ::1] gr = np.ascontiguousarray(grads)
    cdef double[::1] tv = np.ascontiguousarray(t)
    cdef double[:, ::1] vl = np.ascontiguousarray(vel)
    out_arr = np.empty((ix.shape[0], 3, 3))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, e, a, b
    cdef cnp.int64_t nd[3]
    cdef double area, m, vsx, vsy
    cdef double tl[3]
    cdef double gx[3]
    cdef double gy[3]
    cdef double vbx[3]
    cdef double vby[3]
    with nogil:
        for i in range(ix.shape[0]):
            e = ix[i]
            area = ar[e]
            m = area / 12.0
            for a in range(3):
                nd[a] = cn[e, a]
                tl[a] = tv[nd[a]]
                gx[a] = gr[e, a, 0]
                gy[a] = gr[e, a, 1]
            vsx = (vl[nd[0], 0] + vl[nd[1], 0]) + vl[nd[2], 0]
            vsy = (vl[nd[0], 1] + vl[nd[1], 1]) + vl[nd[2], 1]
            for a in range(3):
                vbx[a] = m * (vl[nd[a], 0] + vsx)
                vby[a] = m * (vl[nd[a], 1] + vsy)
            for a in range(3):
                for b in range(3):
                    out[i, a, b] = m * (2.0 if a == b else 1.0) / dt + theta * (
                        nu * area * (gx[a] * gx[b] + gy[a] * gy[b])
                        + (vbx[a] * gx[b] + vby[a] * gy[b])
                    )
                out[i, a, a] = out[i, a, a] + theta * kappa * area * (tl[a] * tl[a])
    return out_arr


def assemble_residual(conn, areas, grads, t, tp, vel, src, double dt, double theta,
                      double nu, double kappa, dof_map, Py_ssize_t n_dofs):
    """Global residual: the exact scatter-sum of all element residuals.

    Contributions accumulate in element order, local slot order;
    constrained slots (dof -1) are dropped.
    """
    cdef cnp.int64_t[:, ::1] cn = np.ascontiguousarray(conn, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] dm = np.ascontiguousarray(dof_map, dtype=np.int64)
    cdef double[::1] ar = np.ascontiguousarray(areas)
    cdef double[:, :, ::1] gr = np.ascontiguousarray(grads)
    cdef double[::1] tv = np.ascontiguousarray(t)
    cdef double[::1] pv = np.ascontiguousarray(tp)
    cdef double[:, ::1] vl = np.ascontiguousarray(vel)
    cdef double[::1] sv = np.ascontiguousarray(src)
    out_arr = np.zeros(n_dofs)
    cdef double[::1] out = out_arr
    cdef double r[3]
    cdef Py_ssize_t e, a
    cdef cnp.int64_t a0, a1, a2, dof
    with nogil:
        for e in range(cn.shape[0]):
            a0 = cn[e, 0]; a1 = cn[e, 1]; a2 = cn[e, 2]
            _residual_one(
                tv[a0], tv[a1], tv[a2], pv[a0], pv[a1], pv[a2],
                vl[a0, 0], vl[a0, 1], vl[a1, 0], vl[a1, 1], vl[a2, 0], vl[a2, 1],
                sv[a0], sv[a1], sv[a2],
                ar[e],
                gr[e, 0, 0], gr[e, 0, 1], gr[e, 1, 0], gr[e, 1, 1], gr[e, 2, 0], gr[e, 2, 1],
                dt, theta, nu, kappa, &r[0])
            for a in range(3):
                dof = dm[e, a]
                if dof >= 0:
                    out[dof] = out[dof] + r[a]
    return out_arr
