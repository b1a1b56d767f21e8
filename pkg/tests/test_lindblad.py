import math

import numpy as np
import pytest

from pump_deck.core import eigendecompose
from pump_deck.errors import StepTooLarge, ZeroSweepRate
from pump_deck.lindblad import (
    COSINE,
    LINEAR,
    QUADRATIC,
    PumpProtocol,
    convergence_check,
    current_trace,
    evolve,
    evolve_batch,
    evolve_converged,
    lindblad_rhs,
    model_operators,
    suggest_step,
)
from pump_deck.models import SIGMA_X, SIGMA_Z, CustomModel, ModelSpec

H0 = 0.7 * SIGMA_Z + 0.4 * SIGMA_X


def constant_model():
    def h(k, s):
        return np.broadcast_to(H0, np.shape(s) + (2, 2)).copy()

    def zero(k, s):
        return np.zeros(np.shape(s) + (2, 2), dtype=complex)

    return ModelSpec("custom", custom=CustomModel(H=h, dH_ds=zero))


def random_state(rng, n=2):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


@pytest.mark.parametrize("kind", [LINEAR, COSINE, QUADRATIC])
def test_protocol_endpoints(kind):
    p = PumpProtocol(kind, 1e-2)
    assert float(p.s(p.t_start)) == pytest.approx(-1.0, abs=1e-12)
    assert float(p.s(p.t_end)) == pytest.approx(1.0, abs=1e-12)
    t = np.linspace(p.t_start, p.t_end, 7)[1:-1]
    np.testing.assert_allclose(p.rate_at_s(p.s(t)), p.ds_dt(t), rtol=1e-9)


def test_protocol_start_rates():
    u = 1e-3
    assert PumpProtocol(LINEAR, u).start_rate == pytest.approx(u)
    assert PumpProtocol(COSINE, u).start_rate == pytest.approx(0.0, abs=1e-15)
    assert PumpProtocol(QUADRATIC, u).start_rate == pytest.approx(2 * math.sqrt(2) * u)


def test_protocol_validation():
    with pytest.raises(ValueError):
        PumpProtocol(LINEAR, 0.0)
    with pytest.raises(ValueError):
        PumpProtocol("sawtooth", 1.0)


def test_kernel_matches_numpy_rk4():
    rng = np.random.default_rng(0)
    rho0 = random_state(rng)
    m = ModelSpec("landau_zener", g0=1.0)
    p = PumpProtocol.linear(0.1)
    h = 0.05
    traj = evolve(rho0, m, p, 0.8, step=h, stride=1)
    ops = model_operators(m)
    r = rho0.copy()
    t = p.t_start
    n = 5

    def f(tt, rr):
        hh = ops(p.s(np.array([tt])))[0][0, 0]
        return lindblad_rhs(rr, hh, hh, 0.8)

    step = traj.step
    for _ in range(n):
        k1 = f(t, r)
        k2 = f(t + step / 2, r + step / 2 * k1)
        k3 = f(t + step / 2, r + step / 2 * k2)
        k4 = f(t + step, r + step * k3)
        r = r + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += step
    np.testing.assert_allclose(traj.rho[n], r, atol=1e-13)


def test_unitary_constant_h_keeps_populations():
    rng = np.random.default_rng(1)
    rho0 = random_state(rng)
    m = constant_model()
    traj = evolve(rho0, m, PumpProtocol.linear(0.05), 0.0)
    f = eigendecompose(H0)
    pops = np.real(np.einsum("tii->ti", f.project(traj.rho)))
    np.testing.assert_allclose(pops, np.broadcast_to(pops[0], pops.shape), atol=1e-10)
    d = traj.diagnostics()
    assert d["hermiticity"] < 1e-12 and d["trace_drift"] < 1e-12 and d["min_eigenvalue"] > -1e-12


def test_constant_h_closed_form():
    rng = np.random.default_rng(2)
    rho0 = random_state(rng)
    gamma = 0.6
    m = constant_model()
    p = PumpProtocol.linear(0.1)
    traj = evolve(rho0, m, p, gamma, step=0.01)
    f = eigendecompose(H0)
    e = f.energies
    g = e[1] - e[0]
    t = traj.t - traj.t[0]
    r0 = f.project(rho0)[1, 0]
    exact = r0 * np.exp(-1j * g * t - 0.5 * gamma * g**2 * t)
    np.testing.assert_allclose(f.project(traj.rho)[:, 1, 0], exact, atol=1e-8)


def test_batched_equals_single():
    rng = np.random.default_rng(3)
    m = ModelSpec("qwz", delta=1.0)
    k = np.array([-0.5, 0.2, 1.4])
    rho0 = np.array([random_state(rng) for _ in k])
    p = PumpProtocol.linear(0.5, 0.0, 2 * np.pi)
    step = suggest_step(m, p, 0.7, k=k)
    batch = evolve_batch(rho0, model_operators(m, k), p, 0.7, step, with_current=True)
    for i, kk in enumerate(k):
        single = evolve(rho0[i], m, p, 0.7, step=step, k=kk)
        np.testing.assert_allclose(single.final, batch.final[i], atol=1e-13)
        assert single.charge == pytest.approx(batch.charge[i], abs=1e-12)


def test_step_too_large_detected():
    m = ModelSpec("landau_zener", g0=1.0)
    p = PumpProtocol.linear(0.05)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    big = 100 * suggest_step(m, p, 1.0)
    with pytest.raises(StepTooLarge):
        evolve(rho0, m, p, 1.0, step=big)


def test_convergence_check_pass_and_fail():
    m = ModelSpec("landau_zener", g0=1.0)
    p = PumpProtocol.linear(0.05)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    h = suggest_step(m, p, 1.0)
    fine, ok = evolve_converged(rho0, m, p, 1.0)
    assert ok.passed and fine.step <= h / 2
    with np.errstate(all="ignore"):
        coarse = evolve(rho0, m, p, 1.0, step=100 * h, check=False)
        fine = evolve(rho0, m, p, 1.0, step=50 * h, check=False)
        bad = convergence_check(coarse, fine)
    assert not bad.passed
    assert "FAIL" in str(bad)


def test_richardson_ratio():
    m = ModelSpec("landau_zener", g0=1.0)
    p = PumpProtocol.linear(0.05)
    rho0 = random_state(np.random.default_rng(4))
    h = 2 * suggest_step(m, p, 1.0)
    runs = [evolve(rho0, m, p, 1.0, step=h / 2**i) for i in range(3)]
    e1 = convergence_check(runs[0], runs[1]).distance
    e2 = convergence_check(runs[1], runs[2]).distance
    assert 12 < e1 / e2 < 20


def test_current_trace():
    assert current_trace(np.eye(2) / 2, SIGMA_X, 1e-3) == 0.0
    with pytest.raises(ZeroSweepRate):
        current_trace(np.eye(2) / 2, SIGMA_X, 0.0)
    m = ModelSpec("qwz", delta=1.0)
    b = m.bundle(0.4, 1.1)
    f = eigendecompose(b.H)
    rho = np.outer(f.vectors[:, 0], f.vectors[:, 0].conj())
    v = 1e-3
    band_velocity = np.real(f.project(b.dH_dk)[0, 0])
    assert current_trace(rho, b.dH_dk, v) == pytest.approx(band_velocity / v)


def test_purity_never_increases():
    rng = np.random.default_rng(5)
    m = ModelSpec("spin_one", g0=1.0)
    traj = evolve(random_state(rng, 3), m, PumpProtocol(COSINE, 0.1), 2.0)
    assert traj.diagnostics()["max_purity_increase"] <= 1e-12
