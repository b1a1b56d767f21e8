"""Dense Hermitian linear algebra on small matrices.

Everything here accepts stacks of matrices with arbitrary leading batch
dimensions, ``(..., n, n)``, so that a whole (k, s) grid can be diagonalised
in one call.  Eigenvector derivatives are never taken numerically; the
off-diagonal connection is obtained from matrix elements of dH/dlambda.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousGauge, DegenerateSpectrum, DiagonalRequest, NotHermitian

GAP_THRESHOLD = 1e-6
HERMITIAN_TOL = 1e-12
GAUGE_TIE_TOL = 1e-12

DENSITY_HERMITIAN_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-8
DENSITY_POSITIVITY_TOL = 1e-8


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def hermiticity_error(m):
    """Max-norm of ``M - M^dagger`` over the whole stack."""
    m = np.asarray(m)
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(m - dagger(m))))


def check_hermitian(m, tol=HERMITIAN_TOL):
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    err = hermiticity_error(m)
    if err > tol * scale:
        raise NotHermitian(f"|M - M^dagger|_max = {err:.3e} exceeds {tol * scale:.1e}")
    return m


def commutator(a, b):
    return a @ b - b @ a


def gauge_fix(vectors, strict=False):
    """Fix the phase of every eigenvector column.

    The largest-magnitude component of each column is made real and
    positive.  Components whose magnitudes agree to within 1e-12 count as a
    tie and the lowest index wins; with ``strict=True`` a tie raises
    :class:`AmbiguousGauge` instead.

    Works on ``(..., n, n)`` stacks (columns are vectors) and on single
    vectors of shape ``(n,)``.
    """
    v = np.asarray(vectors, dtype=complex)
    single = v.ndim == 1
    if single:
        v = v[:, None]
    mag = np.abs(v)
    top = mag.max(axis=-2, keepdims=True)
    near = mag >= top - GAUGE_TIE_TOL
    if strict and np.any(near.sum(axis=-2) > 1):
        raise AmbiguousGauge("two components tie in magnitude within 1e-12")
    # argmax on a boolean array returns the first True, i.e. the lowest index
    idx = np.argmax(near, axis=-2)[..., None, :]
    pivot = np.take_along_axis(v, idx, axis=-2)
    out = v * (np.abs(pivot) / pivot)
    # the pivot itself is now real-positive up to rounding; make it exact
    np.put_along_axis(out, idx, np.abs(pivot), axis=-2)
    return out[:, 0] if single else out


@dataclass(frozen=True)
class EigenFrame:
    """Ascending eigenvalues and gauge-fixed eigenvectors (as columns).

    Arrays carry the same leading batch shape as the input Hamiltonian.
    """

    energies: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self):
        return self.energies.shape[-1]

    @property
    def gaps(self):
        """``g[..., m, j] = E_m - E_j``."""
        e = self.energies
        return e[..., :, None] - e[..., None, :]

    def project(self, op):
        """Matrix elements ``<a|op|b>`` in this eigenbasis."""
        return dagger(self.vectors) @ op @ self.vectors

    def expand(self, op_eig):
        """Inverse of :meth:`project`."""
        return self.vectors @ op_eig @ dagger(self.vectors)

    def reconstruct(self):
        return self.expand(self.energies[..., :, None] * np.eye(self.dim))

    def __getitem__(self, index):
        return EigenFrame(self.energies[index], self.vectors[index])


def min_gap(energies):
    """Smallest adjacent level spacing per batch element."""
    return np.min(np.diff(energies, axis=-1), axis=-1)


def eigendecompose(h, gap_threshold=GAP_THRESHOLD, phase_scramble=None):
    """Diagonalise a stack of Hermitian matrices.

    Parameters
    ----------
    h : array_like, shape (..., n, n)
    gap_threshold : float
        Smallest admissible level spacing; anything below raises
        :class:`DegenerateSpectrum`.
    phase_scramble : numpy.random.Generator, optional
        Test hook: multiply every eigenvector by a random phase before the
        gauge is fixed.  Downstream results must not change.

    Returns
    -------
    EigenFrame
    """
    h = check_hermitian(np.asarray(h, dtype=complex))
    energies, vectors = np.linalg.eigh(h)
    if gap_threshold is not None and energies.shape[-1] > 1:
        gaps = min_gap(energies)
        bad = gaps <= gap_threshold
        if np.any(bad):
            where = np.argwhere(np.atleast_1d(bad))[0]
            raise DegenerateSpectrum(
                f"level spacing {float(np.min(gaps)):.3e} below gap threshold "
                f"{gap_threshold:g} (batch index {tuple(int(i) for i in where)})",
                {"batch_index": tuple(int(i) for i in where)},
            )
    if phase_scramble is not None:
        phases = np.exp(2j * np.pi * phase_scramble.random(energies.shape))
        vectors = vectors * phases[..., None, :]
    return EigenFrame(energies, gauge_fix(vectors))


def connection(frame, dh):
    """Off-diagonal Berry connection ``X[..., a, b] = <a| d/dlambda |b>``.

    Computed from ``<a|dH|b> / (E_b - E_a)``; the diagonal (gauge-dependent)
    part is set to zero.
    """
    num = frame.project(dh)
    g = frame.gaps  # g[a, b] = E_a - E_b
    n = frame.dim
    off = ~np.eye(n, dtype=bool)
    out = np.zeros_like(num)
    out[..., off] = num[..., off] / (-g[..., off])
    return out


def offdiag_coupling(frame, dh, m, j, gap_threshold=GAP_THRESHOLD):
    """``<j| d/dlambda |m>`` for ``m != j`` via ``<j|dH|m> / g_mj``."""
    if m == j:
        raise DiagonalRequest("offdiag_coupling needs m != j")
    g = frame.energies[..., m] - frame.energies[..., j]
    if np.any(np.abs(g) <= gap_threshold):
        raise DegenerateSpectrum(f"|g_{m}{j}| below gap threshold")
    vj = frame.vectors[..., :, j]
    vm = frame.vectors[..., :, m]
    elem = np.einsum("...i,...ij,...j->...", np.conj(vj), dh, vm)
    return elem / g


@dataclass(frozen=True)
class DensityMatrix:
    """A validated density matrix.

    ``basis`` is ``"lab"`` for the fixed computational basis or
    ``"eigen"`` for an instantaneous eigenbasis.
    """

    matrix: np.ndarray
    basis: str = "lab"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        validate_density_matrix(m)

    @classmethod
    def from_amplitudes(cls, amplitudes, basis="lab"):
        psi = np.asarray(amplitudes, dtype=complex)
        return cls(np.outer(psi, np.conj(psi)), basis)

    @property
    def purity(self):
        return float(np.real(np.trace(self.matrix @ self.matrix)))


def density_violations(rho):
    """Hermiticity error, trace drift and most negative eigenvalue.

    Vectorised over leading dimensions; returns the worst case of each.
    """
    rho = np.asarray(rho)
    herm = hermiticity_error(rho)
    tr = np.trace(rho, axis1=-2, axis2=-1)
    drift = float(np.max(np.abs(tr - 1.0)))
    lam = np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))
    return herm, drift, float(np.min(lam))


def validate_density_matrix(rho):
    herm, drift, lam_min = density_violations(rho)
    if herm > DENSITY_HERMITIAN_TOL:
        raise NotHermitian(f"density matrix not Hermitian: {herm:.2e}")
    if drift > DENSITY_TRACE_TOL:
        raise ValueError(f"density matrix trace off by {drift:.2e}")
    if lam_min < -DENSITY_POSITIVITY_TOL:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min:.2e}")


def trace_distance(a, b):
    """Half the trace norm of ``a - b`` (max over any batch dimensions)."""
    d = np.asarray(a) - np.asarray(b)
    d = 0.5 * (d + dagger(d))
    return float(np.max(0.5 * np.sum(np.abs(np.linalg.eigvalsh(d)), axis=-1)))
