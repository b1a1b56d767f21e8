"""First-order (in the sweep rate) transition theory under pure dephasing."""
from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, simpson

from .core import eigendecompose, offdiag_coupling
from .errors import UnsupportedEndpoints, ZeroDephasingWarning
from .lindblad import PumpProtocol

QUADRATURE_PANELS = 2000
QUADRATURE_STABILITY = 1e-9
ZERO_DEPHASING = "zero_dephasing"
QUADRATURE_UNSTABLE = "quadrature_unstable"


@dataclass(frozen=True)
class DephasingRates:
    """Pair dephasing rates ``gamma_mj = gamma/2 (A_m - A_j)^2`` and
    their ratio to the gaps, ``Gamma_mj = gamma_mj / g_mj`` (zero on the
    diagonal)."""

    gamma: float
    pair: np.ndarray
    ratio: np.ndarray


def dephasing_rates(gamma, levels, energies):
    levels = np.asarray(levels, dtype=float)
    energies = np.asarray(energies, dtype=float)
    pair = 0.5 * gamma * (levels[..., :, None] - levels[..., None, :]) ** 2
    g = energies[..., :, None] - energies[..., None, :]
    n = energies.shape[-1]
    off = ~np.eye(n, dtype=bool)
    ratio = np.zeros_like(pair)
    ratio[..., off] = pair[..., off] / g[..., off]
    return DephasingRates(float(gamma), pair, ratio)


def offdiag_first_order(frame, dh_ds, populations, rho_dot_mj, rates, v_local, m, j):
    """Adiabatic coherence ``rho_mj`` to first order in the sweep rate.

    ``populations`` are the instantaneous ``rho_nn``; ``rho_dot_mj`` is the
    s-derivative of the coherence (zero for a settled state).
    """
    # <m| d/ds |j>
    coupling = offdiag_coupling(frame, dh_ds, j, m)
    g = frame.energies[..., m] - frame.energies[..., j]
    num = rho_dot_mj + (populations[..., j] - populations[..., m]) * coupling
    return v_local * num / (-1j * g - rates.pair[..., m, j])


@dataclass(frozen=True)
class TransitionReport:
    """Per-level population changes ``Delta P_j`` split into the part set by
    initial coherence and the part set by initial population differences."""

    delta_p: np.ndarray
    coherence_part: np.ndarray
    population_part: np.ndarray
    protocol: PumpProtocol
    v_start: float
    flags: tuple = ()


def _pair_tables(model, s, gamma):
    bundle = model.bundle(0.0, s)
    frame = eigendecompose(bundle.H)
    levels = model.dephasing_levels(frame, bundle)
    rates = dephasing_rates(gamma, levels, frame.energies)
    elems = frame.project(bundle.dH_ds)  # <a|dH/ds|b>
    return frame, rates, elems


def transfer_weight(model, s, gamma):
    """``B_mj(s) = |<j|dH/ds|m>|^2 gamma_mj / (g_mj^2 (gamma_mj^2 + g_mj^2))``.

    Returned as an array ``(..., n, n)`` indexed ``[j, m]``; zero on the
    diagonal.
    """
    frame, rates, elems = _pair_tables(model, s, gamma)
    g = frame.gaps
    n = frame.dim
    off = ~np.eye(n, dtype=bool)
    out = np.zeros(g.shape)
    gr = rates.pair
    out[..., off] = (
        np.abs(elems[..., off]) ** 2 * gr[..., off] / (g[..., off] ** 2 * (gr[..., off] ** 2 + g[..., off] ** 2))
    )
    return out


def coherence_transfer(model, s0, rho0_eig, gamma, v_start):
    """Boundary term set by initial coherence, one value per level j."""
    frame, rates, elems = _pair_tables(model, np.asarray(s0, dtype=float), gamma)
    g = frame.gaps
    n = frame.dim
    out = np.zeros(n)
    for j in range(n):
        acc = 0.0
        for m in range(n):
            if m == j:
                continue
            c = elems[j, m] / (g[m, j] * (rates.pair[m, j] + 1j * g[m, j]))
            acc += 2.0 * (rho0_eig[m, j] * c).real
        out[j] = -v_start * acc
    return out


def population_transfer(model, protocol, rho0_eig, gamma, quadrature_n=QUADRATURE_PANELS):
    """First-order population change between the protocol endpoints.

    ``rho0_eig`` is the initial density matrix in the gauge-fixed
    eigenbasis of ``H(s_start)`` (ascending energies).
    """
    rho0_eig = np.asarray(rho0_eig, dtype=complex)
    flags = []
    if gamma == 0:
        warnings.warn("population_transfer assumes gamma > 0", ZeroDephasingWarning, stacklevel=2)
        flags.append(ZERO_DEPHASING)
    v_start = protocol.start_rate
    coh = coherence_transfer(model, protocol.s_start, rho0_eig, gamma, v_start)

    pops = np.real(np.diag(rho0_eig))

    def integral(panels):
        s = np.linspace(protocol.s_start, protocol.s_end, panels + 1)
        w = transfer_weight(model, s, gamma) * protocol.rate_at_s(s)[:, None, None]
        return simpson(w, x=s, axis=0)  # [j, m]

    weights = integral(quadrature_n)
    if np.max(np.abs(integral(2 * quadrature_n) - weights)) > QUADRATURE_STABILITY:
        flags.append(QUADRATURE_UNSTABLE)
    diff = pops[:, None] - pops[None, :]  # rho_jj - rho_mm
    pop = -2.0 * np.sum(diff * weights, axis=1)
    return TransitionReport(coh + pop, coh, pop, protocol, v_start, tuple(flags))


def _lz_integrand(theta, gamma):
    c2 = math.cos(theta) ** 2
    return c2 * c2 / (gamma * gamma + 4.0 * c2)


def lz_transition_parts(v, gamma):
    """Coherence and population terms of the Landau-Zener closed form.

    Fixed configuration: ``g0 = 1``, sweep from ``s = -1`` to ``1`` at
    constant rate ``v``, ``A = H``, initial amplitudes ``(sqrt(3)/2, 1/2)``
    on the (ground, excited) states in the phase convention for which the
    coherence term is negative.
    """
    coherence = -v * math.sqrt(3.0) * gamma / (8.0 * (gamma**2 + 2.0))
    integral, _ = quad(_lz_integrand, -math.pi / 4, math.pi / 4, args=(gamma,), epsabs=1e-13, epsrel=1e-13)
    return coherence, 0.5 * v * gamma * integral


def lz_transition_closed_form(v, gamma):
    """Excited-state population change of the fixed Landau-Zener setup."""
    coherence, population = lz_transition_parts(v, gamma)
    return coherence + population


def _check_three_level_endpoints(s0, s1):
    if s0 != -1.0 or s1 != 1.0:
        raise UnsupportedEndpoints("three-level closed form only holds for s0 = -1, s1 = 1")


def three_level_d1(gamma, g0):
    r = math.sqrt(gamma**2 * g0**2 + 4.0)
    acot = math.atan2(1.0, g0)  # inverse cotangent, principal branch for g0 > 0
    return 0.25 * gamma * g0**2 * (
        (2.0 - gamma**2 * g0**2) * acot / g0**3
        + gamma**3 * math.atan(gamma / r) / r
        + 2.0 / (g0**4 + g0**2)
    )


def three_level_transition_closed_form(v, gamma, g0, s0, rho11, rho22, rho12, s1=1.0):
    """Printed closed form for the spin-1 sweep, evaluated literally.

    Returns a complex number: at ``s0 = -1`` the square root in the second
    coefficient has a negative argument, so the printed expression is not
    real whenever ``rho12 != 0``.  See :func:`three_level_transition_corrected`
    for the first-order result that matches brute-force evolution.
    """
    _check_three_level_endpoints(s0, s1)
    d1 = three_level_d1(gamma, g0)
    g1 = math.sqrt(g0**2 + (1.0 - 2.0 * s0) ** 2)
    rho12 = complex(rho12)
    num = 4.0 * math.sqrt(2.0) * g0 * (rho12.real * gamma * g1 - 2.0 * rho12.imag) * (g1 + 2.0 * s0 - 1.0)
    den = g1**3 + (4.0 + gamma**2 * g1**2) * cmath.sqrt(g1**2 + (2.0 * g1 + 1.0) * (2.0 * s0 - 1.0))
    d2 = num / den
    return -2.0 * v * (rho11 - rho22) * d1 - v * d2


def three_level_transition_corrected(v, gamma, g0, rho11, rho22, rho12, s0=-1.0, s1=1.0):
    """First-order change of the top-level population for the spin-1 sweep.

    Levels are labelled in descending energy: 1 is the top (second
    excited) state, 2 the middle one.  ``rho12 = <1|rho|2>`` in the
    gauge-fixed eigenbasis of ``H(s0)``.  The population term is half the
    printed one (the printed coefficient equals twice the integral of the
    transfer weight).
    """
    from .models import SPIN_ONE, ModelSpec

    _check_three_level_endpoints(s0, s1)
    d1 = three_level_d1(gamma, g0)
    e0 = math.hypot(g0, s0)
    frame = ModelSpec(SPIN_ONE, g0=g0).frame(0.0, s0)
    dh = np.diag([1.0, 0.0, -1.0]).astype(complex)
    # sign of <top|S_z|middle> in the fixed gauge; magnitude is g0 / (sqrt(2) e0)
    sign = math.copysign(1.0, (np.conj(frame.vectors[:, 2]) @ dh @ frame.vectors[:, 1]).real)
    rho12 = complex(rho12)
    d2 = -sign * 2.0 * math.sqrt(2.0) * g0 * (gamma * e0 * rho12.real + 2.0 * rho12.imag) / (
        e0**3 * (gamma**2 * e0**2 + 4.0)
    )
    return -v * (rho11 - rho22) * d1 - v * d2

