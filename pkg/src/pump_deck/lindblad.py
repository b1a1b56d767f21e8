"""Brute-force pure-dephasing Lindblad evolution along a sweep protocol.

The master equation

    d rho / dt = -i [H, rho] + gamma (A rho A - {A^2, rho} / 2)

is integrated in the fixed lab basis with classical fixed-step RK4 in
physical time t.  No trace renormalisation is applied; trace drift and
negative eigenvalues are reported as :class:`~pump_deck.errors.StepTooLarge`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import (
    DENSITY_POSITIVITY_TOL,
    DENSITY_TRACE_TOL,
    density_violations,
    eigendecompose,
    trace_distance,
)
from .errors import StepTooLarge, ZeroSweepRate

LINEAR = "linear"
COSINE = "cosine"
QUADRATIC = "quadratic"
PROTOCOL_KINDS = (LINEAR, COSINE, QUADRATIC)

# step * max|lambda| where lambda = -i g_mj - gamma_mj are the coherence
# eigenvalues of the frozen Lindbladian
STEP_SAFETY = 0.5
TARGET_SAMPLES = 2001
CONVERGENCE_TOL = 1e-8


@dataclass(frozen=True)
class PumpProtocol:
    """Sweep ``t -> s(t)``.

    ``linear``: ``s = v t`` on ``[s_start / v, s_end / v]``.
    ``cosine``: ``x = cos(u t)`` on ``[-pi / u, 0]``.
    ``quadratic``: ``x = 1 - u^2 t^2`` on ``[-sqrt(2) / u, 0]``.
    For the last two, ``x`` runs from -1 to 1 and is mapped affinely onto
    ``[s_start, s_end]`` (the identity for the default endpoints).
    """

    kind: str
    rate: float
    s_start: float = -1.0
    s_end: float = 1.0

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"unknown protocol {self.kind!r}")
        if not self.rate > 0:
            raise ValueError("protocol rate must be positive")
        if not self.s_end > self.s_start:
            raise ValueError("protocol must sweep towards larger s")

    @classmethod
    def linear(cls, rate, s_start=-1.0, s_end=1.0):
        return cls(LINEAR, rate, s_start, s_end)

    @property
    def t_start(self):
        u = self.rate
        if self.kind == LINEAR:
            return self.s_start / u
        if self.kind == COSINE:
            return -math.pi / u
        return -math.sqrt(2.0) / u

    @property
    def t_end(self):
        if self.kind == LINEAR:
            return self.s_end / self.rate
        return 0.0

    @property
    def duration(self):
        return self.t_end - self.t_start

    def _scale(self):
        return 0.5 * (self.s_end - self.s_start)

    def s(self, t):
        t = np.asarray(t, dtype=float)
        u = self.rate
        if self.kind == LINEAR:
            return u * t
        x = np.cos(u * t) if self.kind == COSINE else 1.0 - (u * t) ** 2
        return self.s_start + self._scale() * (x + 1.0)

    def ds_dt(self, t):
        t = np.asarray(t, dtype=float)
        u = self.rate
        if self.kind == LINEAR:
            return np.full_like(t, u)
        if self.kind == COSINE:
            return -self._scale() * u * np.sin(u * t)
        return -self._scale() * 2.0 * u * u * t

    def rate_at_s(self, s):
        """Local sweep rate ``ds/dt`` expressed as a function of ``s``."""
        s = np.asarray(s, dtype=float)
        u = self.rate
        if self.kind == LINEAR:
            return np.full_like(s, u)
        x = np.clip((s - self.s_start) / self._scale() - 1.0, -1.0, 1.0)
        if self.kind == COSINE:
            return self._scale() * u * np.sqrt(1.0 - x * x)
        return self._scale() * 2.0 * u * np.sqrt(1.0 - x)

    @property
    def start_rate(self):
        return float(self.ds_dt(self.t_start))

    @property
    def mean_rate(self):
        return (self.s_end - self.s_start) / self.duration

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate, "s_start": self.s_start, "s_end": self.s_end}


@dataclass
class Trajectory:
    """Sampled solution of one batched run.

    ``rho`` has shape ``(n_samples,) + batch_shape + (n, n)``; ``charge``
    holds the time integral of ``Tr[rho v_k]`` per batch member when a
    velocity operator was supplied.
    """

    t: np.ndarray
    s: np.ndarray
    rho: np.ndarray
    step: float
    gamma: np.ndarray
    charge: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.rho[-1]

    @property
    def initial(self):
        return self.rho[0]

    def diagnostics(self):
        herm, drift, lam_min = density_violations(self.rho)
        purity = np.real(np.einsum("...ij,...ji->...", self.rho, self.rho))
        rise = float(np.max(np.diff(purity, axis=0))) if len(self.t) > 1 else 0.0
        return {
            "hermiticity": herm,
            "trace_drift": drift,
            "min_eigenvalue": lam_min,
            "max_purity_increase": rise,
        }


def lindblad_rhs(rho, h, a, gamma):
    """Right-hand side of the master equation (numpy reference version)."""
    a2 = a @ a
    return -1j * (h @ rho - rho @ h) + gamma * (a @ rho @ a - 0.5 * (a2 @ rho + rho @ a2))


def suggest_step(model, protocol, gamma, k=None, safety=STEP_SAFETY, n_probe=257):
    """Largest step with ``step * max|g_mj + i gamma_mj| <= safety`` on the path."""
    s = protocol.s(np.linspace(protocol.t_start, protocol.t_end, n_probe))
    if k is None:
        kk, ss = 0.0, s
    else:
        kk, ss = np.meshgrid(np.atleast_1d(k), s, indexing="ij")
    bundle = model.bundle(kk, ss)
    frame = eigendecompose(bundle.H)
    levels = model.dephasing_levels(frame, bundle)
    g = frame.gaps
    gamma_max = float(np.max(np.atleast_1d(gamma)))
    rates = 0.5 * gamma_max * (levels[..., :, None] - levels[..., None, :]) ** 2
    lam = float(np.max(np.abs(g + 1j * rates)))
    return safety / max(lam, 1e-12)


def _default_stride(n_steps):
    return max(1, math.ceil(n_steps / TARGET_SAMPLES))


def evolve_batch(
    rho0,
    operators,
    protocol,
    gammas,
    step,
    stride=None,
    with_current=False,
    check=True,
    keep_samples=True,
):
    """Integrate a stack of independent systems over the whole protocol.

    Parameters
    ----------
    rho0 : array, shape (B, n, n)
        Initial states in the lab basis.
    operators : callable
        ``operators(s)`` with ``s`` of shape ``(S,)`` returns ``(H, A, V)``
        stacks of shape ``(S, B, n, n)``; ``V`` (velocity operator) may be
        ``None`` when ``with_current`` is false.
    gammas : float or array, shape (B,)
    step : float
        Requested RK4 step in t; shrunk so an integer number of steps
        spans the protocol exactly.
    stride : int, optional
        Store every ``stride``-th step (default gives about 2001 samples).
    """
    rho = np.array(rho0, dtype=np.complex128, copy=True)
    if rho.ndim != 3:
        raise ValueError("rho0 must have shape (B, n, n)")
    nb, n, _ = rho.shape
    gam = np.ascontiguousarray(np.broadcast_to(np.asarray(gammas, dtype=float), (nb,)))
    if np.any(gam < 0):
        raise ValueError("gamma must be non-negative")
    if not step > 0:
        raise ValueError("step must be positive")
    t0, t1 = protocol.t_start, protocol.t_end
    n_steps = max(1, math.ceil((t1 - t0) / step - 1e-9))
    h = (t1 - t0) / n_steps
    if stride is None:
        stride = _default_stride(n_steps)
    chunk = stride if keep_samples else min(n_steps, 512)

    charge = np.zeros(nb)
    dummy = np.zeros((1, 1, n, n), dtype=np.complex128)
    times = [t0]
    samples = [rho.copy()]
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        t = t0 + (done + 0.5 * np.arange(2 * m + 1)) * h
        H, A, V = operators(protocol.s(t))
        same = A is None or A is H
        H = np.ascontiguousarray(H, dtype=np.complex128)
        A = H if same else np.ascontiguousarray(A, dtype=np.complex128)
        V = np.ascontiguousarray(V, dtype=np.complex128) if with_current else dummy
        _kernels.rk4_chunk(rho, H, A, V, gam, h, charge, with_current)
        done += m
        if keep_samples or done == n_steps:
            times.append(t0 + done * h)
            samples.append(rho.copy())
    times = np.array(times)
    traj = Trajectory(
        t=times,
        s=protocol.s(times),
        rho=np.stack(samples),
        step=h,
        gamma=gam,
        charge=charge if with_current else None,
        meta={"n_steps": n_steps, "stride": stride},
    )
    if check:
        _check_trajectory(traj)
    return traj


def _check_trajectory(traj):
    _, drift, lam_min = density_violations(traj.rho)
    if drift > DENSITY_TRACE_TOL or lam_min < -DENSITY_POSITIVITY_TOL:
        raise StepTooLarge(
            f"step {traj.step:.3g}: trace drift {drift:.2e}, min eigenvalue "
            f"{lam_min:.2e}; halve the step"
        )


def model_operators(model, k=None):
    """Adapter turning a :class:`ModelSpec` into an ``operators(s)`` callable.

    With ``k`` given (1-D array) the batch runs over k; otherwise over a
    single system, which callers broadcast to the batch size they need.
    """
    if k is None:

        def ops(s):
            b = model.bundle(0.0, s)
            h = b.H[:, None]
            return h, (h if b.A is b.H else b.A[:, None]), None

        return ops
    k = np.asarray(k, dtype=float)

    def ops(s):
        kk, ss = np.meshgrid(k, s, indexing="xy")
        b = model.bundle(kk, ss)
        return b.H, b.A, b.dH_dk

    return ops


def _broadcast_ops(ops, nb):
    def wrapped(s):
        H, A, V = ops(s)
        shape = (H.shape[0], nb) + H.shape[2:]
        same = A is None or A is H
        H = np.broadcast_to(H, shape)
        return H, (H if same else np.broadcast_to(A, shape)), V

    return wrapped


def evolve(rho0, model, protocol, gamma, step=None, k=None, stride=None, check=True):
    """Evolve one density matrix (lab basis) along ``protocol``.

    When ``k`` is given the model's velocity operator is used and the
    trajectory carries the time-integrated current in ``charge``.
    """
    rho0 = np.asarray(getattr(rho0, "matrix", rho0), dtype=complex)
    if step is None:
        step = suggest_step(model, protocol, gamma, k=None if k is None else [k])
    if k is None:
        ops = _broadcast_ops(model_operators(model), 1)
        with_current = False
    else:
        ops = model_operators(model, [float(k)])
        with_current = model.has_k
    traj = evolve_batch(rho0[None], ops, protocol, gamma, step, stride, with_current, check)
    traj.rho = traj.rho[:, 0]
    traj.gamma = float(traj.gamma[0])
    if traj.charge is not None:
        traj.charge = float(traj.charge[0])
    traj.meta.update(model=model.to_dict(), k=k)
    return traj


@dataclass(frozen=True)
class ConvergenceReport:
    distance: float
    passed: bool
    tol: float = CONVERGENCE_TOL

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        return f"convergence {state}: trace distance {self.distance:.3e} (tol {self.tol:g})"


def convergence_check(coarse, fine, tol=CONVERGENCE_TOL):
    """Compare final states of two runs that differ only in the step size."""
    a = getattr(coarse, "final", coarse)
    b = getattr(fine, "final", fine)
    d = trace_distance(a, b)
    return ConvergenceReport(d, d <= tol, tol)


def evolve_converged(rho0, model, protocol, gamma, k=None, tol=CONVERGENCE_TOL, max_halvings=8, step=None):
    """Evolve with the step halved until runs at ``h`` and ``h/2`` agree.

    Starts from ``step`` (default :func:`suggest_step`).  Returns the finer
    trajectory and the last :class:`ConvergenceReport`; the report fails
    if ``max_halvings`` is exhausted.
    """
    if step is None:
        step = suggest_step(model, protocol, gamma, k=None if k is None else [k])
    coarse = evolve(rho0, model, protocol, gamma, step=step, k=k)
    for _ in range(max_halvings):
        fine = evolve(rho0, model, protocol, gamma, step=coarse.step / 2, k=k)
        report = convergence_check(coarse, fine, tol)
        if report.passed:
            break
        coarse = fine
    return fine, report


def current_trace(rho, v_k, v_local):
    """``Tr[rho v_k] / v_local``, the instantaneous pumping integrand."""
    if v_local == 0:
        raise ZeroSweepRate("local sweep rate is zero; integrate in t instead")
    rho = getattr(rho, "matrix", rho)
    val = np.trace(np.asarray(rho) @ np.asarray(v_k))
    if abs(val.imag) > 1e-10:
        raise ValueError(f"Tr[rho v_k] has imaginary part {val.imag:.2e}")
    return float(val.real) / v_local

