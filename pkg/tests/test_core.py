import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pump_deck.core import (
    DensityMatrix,
    connection,
    eigendecompose,
    gauge_fix,
    offdiag_coupling,
    trace_distance,
)
from pump_deck.errors import AmbiguousGauge, DegenerateSpectrum, DiagonalRequest, NotHermitian
from pump_deck.models import SIGMA_X, SIGMA_Z, SPIN1_X, ModelSpec, lz_bundle, qwz_bundle


def random_hermitian(rng, n):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (z + z.conj().T)


def test_sigma_z_frame():
    f = eigendecompose(SIGMA_Z)
    np.testing.assert_allclose(f.energies, [-1, 1])
    np.testing.assert_allclose(f.vectors[:, 0], [0, 1])
    np.testing.assert_allclose(f.vectors[:, 1], [1, 0])


def test_spin1_sx_spectrum():
    np.testing.assert_allclose(eigendecompose(SPIN1_X).energies, [-1, 0, 1], atol=1e-14)


def test_reconstruction():
    rng = np.random.default_rng(1)
    m = random_hermitian(rng, 3)
    np.testing.assert_allclose(eigendecompose(m).reconstruct(), m, atol=1e-10)


def test_batched_matches_single():
    rng = np.random.default_rng(2)
    stack = np.array([random_hermitian(rng, 3) for _ in range(5)])
    f = eigendecompose(stack)
    for i in range(5):
        g = eigendecompose(stack[i])
        np.testing.assert_allclose(f.vectors[i], g.vectors, atol=1e-12)


def test_degenerate_raises():
    with pytest.raises(DegenerateSpectrum):
        eigendecompose(np.eye(2))


def test_not_hermitian():
    with pytest.raises(NotHermitian):
        eigendecompose(np.array([[0, 1], [0, 0]], dtype=complex))


def test_gauge_global_phase():
    v = np.array([1j, 1j]) / np.sqrt(2)
    np.testing.assert_allclose(gauge_fix(v), np.array([1, 1]) / np.sqrt(2))


def test_gauge_strict_tie():
    with pytest.raises(AmbiguousGauge):
        gauge_fix(np.array([1, 1j]) / np.sqrt(2), strict=True)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, 6, elements=st.floats(-1, 1)),
    st.floats(0, 2 * np.pi),
)
def test_gauge_phase_invariance(parts, phase):
    v = parts[:3] + 1j * parts[3:]
    if np.linalg.norm(v) < 1e-3:
        return
    v = v / np.linalg.norm(v)
    np.testing.assert_allclose(gauge_fix(np.exp(1j * phase) * v), gauge_fix(v), atol=1e-12)


def test_gauge_loop_closure():
    s = np.array([0.0, 2 * np.pi])
    f = eigendecompose(qwz_bundle(0.4, s, 1.0).H)
    np.testing.assert_allclose(f.vectors[0], f.vectors[1], atol=1e-12)


def test_scramble_hook_is_absorbed():
    rng = np.random.default_rng(3)
    h = qwz_bundle(np.linspace(-3, 3, 7), 0.3, 1.0).H
    a = eigendecompose(h)
    b = eigendecompose(h, phase_scramble=rng)
    np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-12)


def test_lz_coupling_at_crossing():
    b = lz_bundle(0.0, 1.0)
    f = eigendecompose(b.H)
    assert abs(offdiag_coupling(f, b.dH_ds, 1, 0)) == pytest.approx(0.5, abs=1e-14)


def test_zero_dh_coupling():
    f = eigendecompose(SIGMA_X)
    assert offdiag_coupling(f, np.zeros((2, 2)), 0, 1) == 0


def test_diagonal_request():
    with pytest.raises(DiagonalRequest):
        offdiag_coupling(eigendecompose(SIGMA_X), SIGMA_Z, 1, 1)


def test_coupling_vs_finite_difference():
    k, s, d, h = 0.3, 0.7, 1.0, 1e-5
    b = qwz_bundle(k, s, d)
    f = eigendecompose(b.H)
    fp = eigendecompose(qwz_bundle(k, s + h, d).H)
    fm = eigendecompose(qwz_bundle(k, s - h, d).H)
    dv = (fp.vectors - fm.vectors) / (2 * h)
    fd = np.conj(f.vectors[:, 0]) @ dv[:, 1]  # <0|d_s 1>
    exact = offdiag_coupling(f, b.dH_ds, 1, 0)
    assert abs(fd - exact) <= 1e-6 * abs(exact)
    x = connection(f, b.dH_ds)
    assert x[0, 1] == pytest.approx(exact, abs=1e-14)


def test_connection_antihermitian():
    b = qwz_bundle(np.linspace(-3, 3, 11), 1.1, -1.6)
    x = connection(eigendecompose(b.H), b.dH_dk)
    np.testing.assert_allclose(x, -np.conj(np.swapaxes(x, -1, -2)), atol=1e-14)


def test_density_matrix_validation():
    DensityMatrix(np.eye(2) / 2)
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.2, -0.2]))
    with pytest.raises(ValueError):
        DensityMatrix(np.eye(2))
    rho = DensityMatrix.from_amplitudes([1, 1j] / np.sqrt(2))
    assert rho.purity == pytest.approx(1.0)


def test_trace_distance():
    a = np.diag([1.0, 0.0])
    b = np.diag([0.0, 1.0])
    assert trace_distance(a, b) == pytest.approx(1.0)
    assert trace_distance(a, a) == 0.0


def test_model_frame_shapes():
    f = ModelSpec("qwz", delta=1.0).frame(np.zeros((3, 4)), np.zeros((3, 4)) + 0.5)
    assert f.vectors.shape == (3, 4, 2, 2)
