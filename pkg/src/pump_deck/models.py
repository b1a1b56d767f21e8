"""Hamiltonian families with analytic parameter gradients.

All bundle builders broadcast over array-valued ``k`` and ``s`` and return
operator stacks of shape ``broadcast(k, s).shape + (n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import GAP_THRESHOLD, commutator, eigendecompose
from .errors import DegenerateSpectrum, SymmetryWarning

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

SPIN1_X = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / np.sqrt(2)
SPIN1_Z = np.diag([1.0, 0.0, -1.0]).astype(complex)

COMMUTATOR_TOL = 1e-10

QWZ = "qwz"
LANDAU_ZENER = "landau_zener"
SPIN_ONE = "spin_one"
CUSTOM = "custom"
KINDS = (QWZ, LANDAU_ZENER, SPIN_ONE, CUSTOM)


@dataclass(frozen=True)
class OperatorBundle:
    H: np.ndarray
    A: np.ndarray
    dH_ds: np.ndarray
    dH_dk: Optional[np.ndarray] = None

    def commutator_error(self):
        return float(np.max(np.abs(commutator(self.H, self.A))))


def _pauli(cx, cy, cz):
    cx, cy, cz = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (cx, cy, cz)))
    out = np.empty(cx.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = cz
    out[..., 1, 1] = -cz
    out[..., 0, 1] = cx - 1j * cy
    out[..., 1, 0] = cx + 1j * cy
    return out


def dephasing_operator(h, levels=None):
    """Lindblad operator commuting with ``h``.

    ``levels=None`` gives ``A = H``.  Otherwise ``levels`` lists the
    eigenvalues of A on the instantaneous levels of H in ascending-energy
    order and ``A = sum_m a_m |m><m|`` (projectors are gauge-free).
    """
    if levels is None:
        return h
    levels = np.asarray(levels, dtype=float)
    if levels.shape != (h.shape[-1],):
        raise ValueError(f"need {h.shape[-1]} dephasing eigenvalues, got {levels.shape}")
    _, vecs = np.linalg.eigh(h)
    return (vecs * levels) @ np.conj(np.swapaxes(vecs, -1, -2))


def qwz_bundle(k, s, delta, dephasing=None, check_gap=True):
    """Qi-Wu-Zhang two-band model on the (k, s) torus."""
    k = np.asarray(k, dtype=float)
    s = np.asarray(s, dtype=float)
    k, s = np.broadcast_arrays(k, s)
    sk, ck, ss, cs = np.sin(k), np.cos(k), np.sin(s), np.cos(s)
    dz = delta + ck + cs
    if check_gap:
        # gap is 2|d|
        bad = 2.0 * np.sqrt(sk**2 + ss**2 + dz**2) <= GAP_THRESHOLD
        if np.any(bad):
            i = tuple(np.argwhere(np.atleast_1d(bad))[0])
            kk = float(np.atleast_1d(k)[i])
            sv = float(np.atleast_1d(s)[i])
            raise DegenerateSpectrum(
                f"QWZ gap closes at k={kk:.6g}, s={sv:.6g}, delta={delta:g}",
                {"k": kk, "s": sv, "delta": float(delta)},
            )
    zero = np.zeros_like(k)
    h = _pauli(sk, ss, dz)
    dh_dk = _pauli(ck, zero, -sk)
    dh_ds = _pauli(zero, cs, -ss)
    return OperatorBundle(h, dephasing_operator(h, dephasing), dh_ds, dh_dk)


def lz_bundle(s, g0, dephasing=None):
    """Landau-Zener sweep ``H = (g0 sigma_x + s sigma_z) / 2``."""
    if not g0 > 0:
        raise ValueError("g0 must be positive")
    s = np.asarray(s, dtype=float)
    h = _pauli(0.5 * g0 * np.ones_like(s), np.zeros_like(s), 0.5 * s)
    dh_ds = np.broadcast_to(0.5 * SIGMA_Z, h.shape).copy()
    return OperatorBundle(h, dephasing_operator(h, dephasing), dh_ds)


def spin1_bundle(s, g0, dephasing=None):
    """Three-level sweep ``H = g0 S_x + s S_z`` with ``S_z = diag(1, 0, -1)``."""
    if not g0 > 0:
        raise ValueError("g0 must be positive")
    s = np.asarray(s, dtype=float)
    h = g0 * SPIN1_X + s[..., None, None] * SPIN1_Z
    dh_ds = np.broadcast_to(SPIN1_Z, h.shape).copy()
    return OperatorBundle(h, dephasing_operator(h, dephasing), dh_ds)


@dataclass(frozen=True)
class CustomModel:
    """User-supplied operators; each callable maps ``(k, s)`` to an array stack.

    ``dH_dk`` may be omitted for models without k-dependence; ``A`` defaults
    to ``H``.  Commutation ``[H, A] = 0`` is checked on every evaluation.
    """

    H: Callable
    dH_ds: Callable
    dH_dk: Optional[Callable] = None
    A: Optional[Callable] = None
    dim: int = 2


@dataclass(frozen=True)
class ModelSpec:
    """Which Hamiltonian family, its parameters and the dephasing choice.

    ``dephasing=None`` means ``A = H``; a tuple gives A's eigenvalue on each
    instantaneous level (ascending energy order).
    """

    kind: str
    delta: float = 1.0
    g0: float = 1.0
    dephasing: Optional[tuple] = None
    custom: Optional[CustomModel] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind in (LANDAU_ZENER, SPIN_ONE) and not self.g0 > 0:
            raise ValueError("g0 must be positive")
        if self.kind == CUSTOM and self.custom is None:
            raise ValueError("custom model needs operator callables")
        if self.dephasing is not None:
            object.__setattr__(self, "dephasing", tuple(float(a) for a in self.dephasing))
            if len(self.dephasing) != self.dim:
                raise ValueError(f"dephasing needs {self.dim} level values")

    @property
    def dim(self):
        if self.kind == SPIN_ONE:
            return 3
        if self.kind == CUSTOM:
            return self.custom.dim
        return 2

    @property
    def has_k(self):
        if self.kind == CUSTOM:
            return self.custom.dH_dk is not None
        return self.kind == QWZ

    def bundle(self, k=0.0, s=0.0, check_gap=True):
        if self.kind == QWZ:
            return qwz_bundle(k, s, self.delta, self.dephasing, check_gap=check_gap)
        if self.kind == LANDAU_ZENER:
            return lz_bundle(s, self.g0, self.dephasing)
        if self.kind == SPIN_ONE:
            return spin1_bundle(s, self.g0, self.dephasing)
        c = self.custom
        h = np.asarray(c.H(k, s), dtype=complex)
        if c.A is not None:
            a = np.asarray(c.A(k, s), dtype=complex)
        else:
            a = dephasing_operator(h, self.dephasing)
        dk = None if c.dH_dk is None else np.asarray(c.dH_dk(k, s), dtype=complex)
        b = OperatorBundle(h, a, np.asarray(c.dH_ds(k, s), dtype=complex), dk)
        err = b.commutator_error()
        if err > COMMUTATOR_TOL:
            raise ValueError(f"custom model: [H, A] = {err:.2e} is not zero")
        return b

    def check_gapped(self):
        """Raise :class:`DegenerateSpectrum` if the QWZ gap closes anywhere on
        the torus.  Closings can only sit at ``k, s in {0, pi}``, which a
        discrete k grid may step over."""
        if self.kind != QWZ:
            return
        for k in (0.0, np.pi):
            for s in (0.0, np.pi):
                if 2.0 * abs(self.delta + np.cos(k) + np.cos(s)) <= GAP_THRESHOLD:
                    raise DegenerateSpectrum(
                        f"QWZ gap closes at k={k:.6g}, s={s:.6g}, delta={self.delta:g}",
                        {"k": k, "s": s, "delta": float(self.delta)},
                    )

    def frame(self, k=0.0, s=0.0, phase_scramble=None):
        return eigendecompose(self.bundle(k, s).H, phase_scramble=phase_scramble)

    def dephasing_levels(self, frame, bundle=None):
        """Eigenvalues ``A_m`` of the Lindblad operator on each level of ``frame``."""
        if self.dephasing is not None:
            return np.broadcast_to(np.asarray(self.dephasing), frame.energies.shape)
        if self.kind != CUSTOM or self.custom.A is None:
            return frame.energies
        if bundle is None:
            raise ValueError("custom Lindblad operator: pass the bundle")
        return dephasing_levels_from(bundle, frame)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == QWZ:
            out["delta"] = self.delta
        if self.kind in (LANDAU_ZENER, SPIN_ONE):
            out["g0"] = self.g0
        if self.dephasing is not None:
            out["dephasing"] = list(self.dephasing)
        return out


def dephasing_levels_from(bundle, frame):
    """``A_m = <m|A|m>``; valid for any A commuting with H."""
    return np.real(np.einsum("...ii->...i", frame.project(bundle.A)))


@dataclass(frozen=True)
class SymmetryDiagnostic:
    passed: bool
    spectrum_error: float
    population_error: float

    def __bool__(self):
        return self.passed


def validate_k_symmetry(model, populations, k_grid, s_points=None):
    """Check that spectra and initial band populations are even in k.

    ``populations`` is a callable ``k -> (..., n)`` array of initial band
    populations, or an array aligned with ``k_grid``.  Returns a
    :class:`SymmetryDiagnostic`; a failure also emits
    :class:`~pump_deck.errors.SymmetryWarning`.
    """
    import warnings

    if not model.has_k:
        raise ValueError("model has no k-dependence")
    k = np.asarray(k_grid, dtype=float)
    s = np.linspace(0.0, 2 * np.pi, 9) if s_points is None else np.asarray(s_points, dtype=float)
    kk, ss = np.meshgrid(k, s, indexing="ij")
    e_plus = np.linalg.eigvalsh(model.bundle(kk, ss).H)
    e_minus = np.linalg.eigvalsh(model.bundle(-kk, ss).H)
    spec_err = float(np.max(np.abs(e_plus - e_minus)))
    if callable(populations):
        p_plus = np.asarray(populations(k), dtype=float)
        p_minus = np.asarray(populations(-k), dtype=float)
    else:
        p = np.asarray(populations, dtype=float)
        order = np.argsort(k)
        ks = k[order]
        idx = np.searchsorted(ks, -k)
        idx = np.clip(idx, 0, len(k) - 1)
        if not np.allclose(ks[idx], -k, atol=1e-12, rtol=0):
            raise ValueError("k grid does not contain +-k pairs")
        p_plus = p
        p_minus = p[order][idx]
    pop_err = float(np.max(np.abs(p_plus - p_minus))) if p_plus.size else 0.0
    passed = spec_err <= 1e-10 and pop_err <= 1e-12
    if not passed:
        warnings.warn(
            f"k-symmetry violated: spectrum {spec_err:.2e}, populations {pop_err:.2e}",
            SymmetryWarning,
            stacklevel=2,
        )
    return SymmetryDiagnostic(passed, spec_err, pop_err)
