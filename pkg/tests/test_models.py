import numpy as np
import pytest

from pump_deck.core import eigendecompose
from pump_deck.errors import DegenerateSpectrum, SymmetryWarning
from pump_deck.models import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    CustomModel,
    ModelSpec,
    dephasing_operator,
    lz_bundle,
    qwz_bundle,
    spin1_bundle,
    validate_k_symmetry,
)


def test_qwz_substitutions():
    b = qwz_bundle(0.0, 0.0, 1.0)
    np.testing.assert_allclose(b.H, 3 * SIGMA_Z, atol=1e-15)
    b = qwz_bundle(np.pi / 2, np.pi / 2, 0.0)
    np.testing.assert_allclose(b.H, SIGMA_X + SIGMA_Y, atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(b.H), [-np.sqrt(2), np.sqrt(2)])


def test_qwz_degenerate_location():
    with pytest.raises(DegenerateSpectrum) as info:
        qwz_bundle(np.pi, np.pi, 2.0)
    assert info.value.location["k"] == pytest.approx(np.pi)
    assert info.value.location["s"] == pytest.approx(np.pi)


@pytest.mark.parametrize("delta", [-2.0, 0.0, 2.0])
def test_qwz_continuum_gap_check(delta):
    with pytest.raises(DegenerateSpectrum):
        ModelSpec("qwz", delta=delta).check_gapped()


def test_qwz_gradients_vs_finite_difference():
    k, s, d, h = 0.4, 1.3, -0.5, 1e-6
    b = qwz_bundle(k, s, d)
    dk = (qwz_bundle(k + h, s, d).H - qwz_bundle(k - h, s, d).H) / (2 * h)
    ds = (qwz_bundle(k, s + h, d).H - qwz_bundle(k, s - h, d).H) / (2 * h)
    np.testing.assert_allclose(b.dH_dk, dk, atol=1e-8)
    np.testing.assert_allclose(b.dH_ds, ds, atol=1e-8)


def test_lz_spectrum():
    np.testing.assert_allclose(np.linalg.eigvalsh(lz_bundle(0.0, 1.0).H), [-0.5, 0.5])
    e = np.linalg.eigvalsh(lz_bundle(-1.0, 1.0).H)
    assert e[1] - e[0] == pytest.approx(np.sqrt(2))


def test_lz_commutes():
    rng = np.random.default_rng(0)
    b = lz_bundle(rng.uniform(-3, 3, 20), 1.0)
    assert b.commutator_error() < 1e-14


def test_spin1_spectrum():
    np.testing.assert_allclose(np.linalg.eigvalsh(spin1_bundle(0.0, 1.0).H), [-1, 0, 1], atol=1e-14)
    np.testing.assert_allclose(np.linalg.eigvalsh(spin1_bundle(2.0, 1e-3).H), [-2, 0, 2], atol=1e-6)
    s, g0 = 0.7, 1.3
    e = np.hypot(g0, s)
    np.testing.assert_allclose(np.linalg.eigvalsh(spin1_bundle(s, g0).H), [-e, 0, e], atol=1e-13)


def test_dephasing_operator_levels():
    h = qwz_bundle(0.2, 0.9, 1.0).H
    assert dephasing_operator(h) is h
    a = dephasing_operator(h, (0.0, 1.0))
    f = eigendecompose(h)
    np.testing.assert_allclose(np.diag(f.project(a)).real, [0, 1], atol=1e-14)
    m = ModelSpec("qwz", delta=1.0, dephasing=(0.0, 1.0))
    np.testing.assert_allclose(m.dephasing_levels(f), [0, 1])


def test_custom_model_checks_commutator():
    bad = CustomModel(H=lambda k, s: SIGMA_Z * (1 + s), dH_ds=lambda k, s: SIGMA_Z, A=lambda k, s: SIGMA_X)
    with pytest.raises(ValueError):
        ModelSpec("custom", custom=bad).bundle(0.0, 0.0)
    good = CustomModel(H=lambda k, s: SIGMA_Z * (1 + s), dH_ds=lambda k, s: SIGMA_Z, A=lambda k, s: 2 * SIGMA_Z)
    m = ModelSpec("custom", custom=good)
    b = m.bundle(0.0, 0.5)
    f = eigendecompose(b.H)
    np.testing.assert_allclose(m.dephasing_levels(f, b), [-2, 2])


def test_symmetry_diagnostic():
    m = ModelSpec("qwz", delta=1.0)
    k = np.arange(-10, 11) * (2 * np.pi / 21)
    assert validate_k_symmetry(m, lambda kk: np.stack([np.ones_like(kk), np.zeros_like(kk)], -1), k)
    with pytest.warns(SymmetryWarning):
        bad = validate_k_symmetry(
            m, lambda kk: np.stack([0.5 * (1 + np.sin(kk)), 0.5 * (1 - np.sin(kk))], -1), k
        )
    assert not bad.passed


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("nope")
    with pytest.raises(ValueError):
        ModelSpec("landau_zener", g0=0.0)
    with pytest.raises(ValueError):
        ModelSpec("qwz", dephasing=(1.0,))
