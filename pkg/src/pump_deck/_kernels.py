"""Compiled RK4 stepping for stacks of small density matrices."""
import numpy as np
from numba import njit


@njit(cache=True)
def _lindblad_rhs(r, H, A, gamma, out, ar, a2):
    n = r.shape[0]
    for i in range(n):
        for j in range(n):
            x = 0j
            y = 0j
            for l in range(n):
                x += A[i, l] * r[l, j]
                y += A[i, l] * A[l, j]
            ar[i, j] = x
            a2[i, j] = y
    for i in range(n):
        for j in range(n):
            comm = 0j
            sand = 0j
            anti = 0j
            for l in range(n):
                comm += H[i, l] * r[l, j] - r[i, l] * H[l, j]
                sand += ar[i, l] * A[l, j]
                anti += a2[i, l] * r[l, j] + r[i, l] * a2[l, j]
            out[i, j] = -1j * comm + gamma * (sand - 0.5 * anti)


@njit(cache=True)
def _trace_product(r, v):
    n = r.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += (r[i, j] * v[j, i]).real
    return acc


@njit(cache=True)
def rk4_chunk(rho, H, A, V, gammas, h, charge, with_current):
    """Advance every batch member by ``(H.shape[0] - 1) // 2`` RK4 steps.

    ``H``, ``A`` and ``V`` hold operators on the half-step time grid,
    shape ``(2m + 1, B, n, n)``.  ``charge[b]`` accumulates the time
    integral of ``Tr[rho V]`` with the same RK4 weights as the state.
    """
    nb = rho.shape[0]
    n = rho.shape[1]
    m = (H.shape[0] - 1) // 2
    k1 = np.empty((n, n), np.complex128)
    k2 = np.empty((n, n), np.complex128)
    k3 = np.empty((n, n), np.complex128)
    k4 = np.empty((n, n), np.complex128)
    y = np.empty((n, n), np.complex128)
    ar = np.empty((n, n), np.complex128)
    a2 = np.empty((n, n), np.complex128)
    r = np.empty((n, n), np.complex128)
    half = 0.5 * h
    sixth = h / 6.0
    for b in range(nb):
        for i in range(n):
            for j in range(n):
                r[i, j] = rho[b, i, j]
        g = gammas[b]
        acc = 0.0
        for step in range(m):
            i0 = 2 * step
            c1 = c2 = c3 = c4 = 0.0
            _lindblad_rhs(r, H[i0, b], A[i0, b], g, k1, ar, a2)
            if with_current:
                c1 = _trace_product(r, V[i0, b])
            for i in range(n):
                for j in range(n):
                    y[i, j] = r[i, j] + half * k1[i, j]
            _lindblad_rhs(y, H[i0 + 1, b], A[i0 + 1, b], g, k2, ar, a2)
            if with_current:
                c2 = _trace_product(y, V[i0 + 1, b])
            for i in range(n):
                for j in range(n):
                    y[i, j] = r[i, j] + half * k2[i, j]
            _lindblad_rhs(y, H[i0 + 1, b], A[i0 + 1, b], g, k3, ar, a2)
            if with_current:
                c3 = _trace_product(y, V[i0 + 1, b])
            for i in range(n):
                for j in range(n):
                    y[i, j] = r[i, j] + h * k3[i, j]
            _lindblad_rhs(y, H[i0 + 2, b], A[i0 + 2, b], g, k4, ar, a2)
            if with_current:
                c4 = _trace_product(y, V[i0 + 2, b])
                acc += sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            for i in range(n):
                for j in range(n):
                    r[i, j] += sixth * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
        for i in range(n):
            for j in range(n):
                rho[b, i, j] = r[i, j]
        charge[b] += acc
