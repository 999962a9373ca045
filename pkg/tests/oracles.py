"""Slow independent reference computations used only by the tests."""

from __future__ import annotations

import math

import numpy as np

from bubbly_honeycomb import greens as gr


def cesaro_green(g, alpha, k, x, order=4, q_start=100.0, q_max=1600.0, stop=1e-10):
    """Direct spectral sum with order-``m`` Cesaro averaging in ``Q**2``.

    The averaged partial sums weight ``exp(i p.x)/(k^2 - p^2)`` by
    ``(1 - p^2/Q^2)^m``.  Away from the lattice the full-lattice bias of this
    weight is exactly ``(1 - k^2/Q^2)^m`` times the limit, which is divided
    out.  ``Q`` doubles until successive values agree within ``stop``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    prev, Q = None, q_start
    while True:
        n = int(Q / min(np.linalg.norm(g.alpha1), np.linalg.norm(g.alpha2)) * 1.3) + 3
        i, j = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
        p = np.asarray(alpha) + i.reshape(-1, 1) * g.alpha1 + j.reshape(-1, 1) * g.alpha2
        p2 = np.sum(p * p, axis=1)
        keep = p2 < Q * Q
        p, p2 = p[keep], p2[keep]
        w = (1 - p2 / Q**2) ** order / (k * k - p2)
        val = np.exp(1j * x @ p.T) @ w / g.cell_area / (1 - k * k / Q**2) ** order
        if prev is not None and np.max(np.abs(val - prev)) < stop:
            return val
        if Q >= q_max:
            return val
        prev, Q = val, 2 * Q


def kress_weights(n2):
    """Weights ``R_j`` for ``int_0^{2pi} ln(4 sin^2((t - s)/2)) f(s) ds`` at ``t = s_i``.

    Returns the ``n2 x n2`` matrix for ``n2 = 2n`` equispaced nodes.
    """
    n = n2 // 2
    t = np.pi * np.arange(n2) / n
    d = t[:, None] - t[None, :]
    m = np.arange(1, n)
    w = -(2 * np.pi / n) * np.sum(np.cos(m[None, None, :] * d[..., None]) / m, axis=-1)
    return w - (np.pi / n**2) * np.cos(n * d)


def nystrom_single_layer(g, alpha, R, n_nodes=256, ksq_zero=True, eta=None):
    """Dense Nystrom matrix of the ``k = 0`` single layer on both circles.

    Own-circle kernels split into ``(1/2pi) ln|x - y|`` (Kress product
    rule) plus the pointwise regular part; cross-circle kernels are plain
    trapezoidal.  Returns ``(matrix, nodes)`` with matrix acting on density
    values and producing potential values.
    """
    params = gr.EwaldParams(eta=eta)
    ev = gr.make_evaluator(g, alpha, 0.0, params)
    th = 2 * np.pi * np.arange(n_nodes) / n_nodes
    unit = np.column_stack([np.cos(th), np.sin(th)])
    nodes = [c + R * unit for c in g.centers]
    h = 2 * np.pi / n_nodes
    kw = kress_weights(n_nodes)
    A = np.zeros((2 * n_nodes, 2 * n_nodes), dtype=complex)
    for a in range(2):
        for b in range(2):
            diff = (nodes[a][:, None, :] - nodes[b][None, :, :]).reshape(-1, 2)
            if a == b:
                reg = ev.green_regular(diff).reshape(n_nodes, n_nodes)
                blk = (reg * h + (math.log(R) * h + 0.5 * kw) / (2 * np.pi)) * R
            else:
                blk = ev.green(diff).reshape(n_nodes, n_nodes) * h * R
            A[a * n_nodes : (a + 1) * n_nodes, b * n_nodes : (b + 1) * n_nodes] = blk
    return A, nodes


def nystrom_capacitance(g, alpha, R, n_nodes=256):
    """``C_ij = -int_{dD_i} psi_j`` with ``S psi_j = 1`` on ``dD_j`` and 0 on the other circle."""
    A, _ = nystrom_single_layer(g, alpha, R, n_nodes)
    rhs = np.zeros((2 * n_nodes, 2))
    rhs[:n_nodes, 0] = 1.0
    rhs[n_nodes:, 1] = 1.0
    psi = np.linalg.solve(A, rhs)
    ds = 2 * np.pi * R / n_nodes
    return -np.array([[psi[i * n_nodes : (i + 1) * n_nodes, j].sum() * ds for j in range(2)] for i in range(2)])
