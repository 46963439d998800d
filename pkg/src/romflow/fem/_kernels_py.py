"""Numpy element kernels for the transient convection-diffusion operator.

Reference implementation of the backend interface in ``kernels``.  The
model per linear triangle, with nodal values u and previous-step values
u_prev:

    r = M (u - u_prev)/dt + theta*L(u) + (1-theta)*L(u_prev) - M s
    L(u) = nu*K u + C u + kappa*(A/3)*u**3

M is the consistent mass matrix, K the stiffness matrix, C the convection
matrix for a nodally interpolated velocity, s the nodal source density
(consistent load), and the cubic reaction uses vertex quadrature.  The
scalar evaluation order matches the compiled backend so the two stay
within rounding of each other.
"""

from __future__ import annotations

import numpy as np

backend_name = "python"


def _gradient(u, g):
    # nabla u_h, constant per element: sum_a u_a * grad(phi_a)
    return (u[:, 0, None] * g[:, 0] + u[:, 1, None] * g[:, 1]) + u[:, 2, None] * g[:, 2]


def _spatial(u, gu, vbar, g, areas, nu, kappa):
    # L(u)_a = nu*A*(g_a . gu) + vbar_a . gu + kappa*(A/3)*u_a^3
    diff = nu * areas[:, None] * ((g[:, :, 0] * gu[:, None, 0]) + g[:, :, 1] * gu[:, None, 1])
    conv = (vbar[:, :, 0] * gu[:, None, 0]) + vbar[:, :, 1] * gu[:, None, 1]
    reac = kappa * (areas[:, None] / 3.0) * (u * u * u)
    return (diff + conv) + reac


def element_residuals(idx, conn, areas, grads, t, tp, vel, src, dt, theta, nu, kappa):
    """Local theta-scheme residuals, (len(idx), 3), one row per listed element."""
    c = conn[idx]
    area = areas[idx]
    g = grads[idx]
    tl, tpl, sl = t[c], tp[c], src[c]
    v = vel[c]

    m = area[:, None] / 12.0
    dloc = tl - tpl
    mdiff = m * (dloc + dloc.sum(axis=1)[:, None])
    msrc = m * (sl + sl.sum(axis=1)[:, None])
    # vbar_a = integral of phi_a times the interpolated velocity
    vbar = m[:, :, None] * (v + v.sum(axis=1)[:, None, :])

    lt = _spatial(tl, _gradient(tl, g), vbar, g, area, nu, kappa)
    lp = _spatial(tpl, _gradient(tpl, g), vbar, g, area, nu, kappa)
    return ((mdiff / dt + theta * lt) + (1.0 - theta) * lp) - msrc


def element_jacobians(idx, conn, areas, grads, t, vel, dt, theta, nu, kappa):
    """Local residual derivatives, (len(idx), 3, 3)."""
    c = conn[idx]
    area = areas[idx]
    g = grads[idx]
    tl = t[c]
    v = vel[c]

    m = area[:, None, None] / 12.0
    mass = m * (np.ones((3, 3)) + np.eye(3))[None]
    vbar = (area[:, None] / 12.0)[:, :, None] * (v + v.sum(axis=1)[:, None, :])
    stiff = nu * area[:, None, None] * np.einsum("eak,ebk->eab", g, g)
    conv = np.einsum("eak,ebk->eab", vbar, g)
    jac = mass / dt + theta * (stiff + conv)
    diag = theta * kappa * area[:, None] * (tl * tl)
    jac[:, np.arange(3), np.arange(3)] += diag
    return jac


def assemble_residual(conn, areas, grads, t, tp, vel, src, dt, theta, nu, kappa, dof_map, n_dofs):
    """Global residual: the exact scatter-sum of all element residuals.

    Contributions accumulate in element order, local slot order;
    constrained slots (dof -1) are dropped.
    """
    idx = np.arange(conn.shape[0])
    local = element_residuals(idx, conn, areas, grads, t, tp, vel, src, dt, theta, nu, kappa)
    out = np.zeros(n_dofs)
    flat_dofs = dof_map.ravel()
    keep = flat_dofs >= 0
    np.add.at(out, flat_dofs[keep], local.ravel()[keep])
    return out
