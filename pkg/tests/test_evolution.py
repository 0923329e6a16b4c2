from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from heavysep.errors import DomainError, SupportError
from heavysep.evolution import (
    RegimeLabel,
    DensityProfile,
    DensityTrajectory,
    TestFunction,
    boundary_integrability,
    bump,
    classify_regime,
    drift,
    integrate,
    integrate_explicit,
    linear_system,
    reaction_solution,
    stationary_profile,
    weak_residual,
)
from heavysep.kernel import JumpKernel, ModelParams, continuum_rates
from heavysep.operators import polynomial

R = RegimeLabel
M_15 = 0.9736862331584781  # c zeta(1.5) at gamma = 1.5, from scipy.special.zeta


@pytest.mark.parametrize(
    "gamma,theta,label",
    [
        (1.5, 0.2, R.FRAC_DIFFUSION_DIRICHLET),
        (0.5, -1.0, R.REACTION_DIRICHLET),
        (1.5, 0.5, R.FRAC_DIFFUSION_ROBIN),
        (0.5, 0.0, R.FRAC_REACTION_DIFFUSION_DIRICHLET),
        (1.5, 0.0, R.FRAC_REACTION_DIFFUSION_DIRICHLET),
        (0.5, 0.3, R.FRAC_DIFFUSION_NEUMANN),
        (1.5, 0.9, R.FRAC_DIFFUSION_NEUMANN),
        (1.9, -3.0, R.REACTION_DIRICHLET),
    ],
)
def test_classify_examples(gamma, theta, label):
    assert classify_regime(gamma, theta) is label


def _exact_label(g, t):
    # rational truth table: no floating point on the critical lines
    if t == 0:
        return R.FRAC_REACTION_DIFFUSION_DIRICHLET
    if t < 0:
        return R.REACTION_DIRICHLET
    if g > 1 and t == g - 1:
        return R.FRAC_DIFFUSION_ROBIN
    if g > 1 and t < g - 1:
        return R.FRAC_DIFFUSION_DIRICHLET
    return R.FRAC_DIFFUSION_NEUMANN


def test_classify_partition_grid():
    seen = set()
    for i in range(1, 80):
        g = Fraction(i, 40)
        if g == 1:
            continue
        for j in range(-60, 61):
            t = Fraction(j, 40)
            label = classify_regime(float(g), float(g) - 1.0 if t == g - 1 else float(t))
            assert label is _exact_label(g, t)
            seen.add(label)
    assert seen == set(RegimeLabel)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.0, float("nan")])
def test_classify_rejects_gamma(gamma):
    with pytest.raises(DomainError):
        classify_regime(gamma, 0.3)


def test_drift_constant_is_zero():
    p = ModelParams(40, 1.5, 0.3, 1.0, 0.4, 0.4)
    np.testing.assert_allclose(drift(np.full(39, 0.4), p), 0.0, atol=1e-10)


def test_drift_by_hand_N3():
    gamma, theta, kappa, a, b = 1.5, 0.0, 1.3, 0.2, 0.7
    p = ModelParams(3, gamma, theta, kappa, a, b)
    k = JumpKernel.build(gamma, 3)
    p1 = k.p_table[1]
    rl = np.asarray(k.cum_left)  # r^-_3 at x = 1, 2
    scale = 3.0**gamma
    res = kappa * 3.0**-theta
    rho = np.array([1.0, 0.0])
    # site 1: exchange with site 2, left tail r(1), right tail r(2) by reflection
    d1 = p1 * (0 - 1) + res * (rl[0] * (a - 1) + rl[1] * (b - 1))
    d2 = p1 * (1 - 0) + res * (rl[1] * (a - 0) + rl[0] * (b - 0))
    np.testing.assert_allclose(drift(rho, p), scale * np.array([d1, d2]), rtol=1e-13)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.lists(st.floats(0, 1), min_size=9, max_size=9))
@settings(max_examples=30, deadline=None)
def test_drift_reflection(a, b, rho):
    rho = np.array(rho)
    d = drift(rho, ModelParams(10, 0.7, 0.2, 1.0, a, b))
    e = drift(rho[::-1], ModelParams(10, 0.7, 0.2, 1.0, b, a))
    np.testing.assert_allclose(d, e[::-1], rtol=1e-12, atol=1e-12)


def test_drift_wrong_length():
    with pytest.raises(DomainError):
        drift(np.zeros(5), ModelParams(10, 1.5, 0.0, 1.0, 0.2, 0.8))


def test_linear_system_monotone_structure():
    A, b = linear_system(ModelParams(30, 0.6, -0.5, 2.0, 0.2, 0.8))
    off = A - np.diag(np.diag(A))
    assert np.all(off >= 0)
    np.testing.assert_allclose(A, A.T, rtol=1e-14)
    assert np.all(-np.diag(A) > off.sum(axis=1))
    assert np.all(b > 0)


def test_integrate_zero_horizon():
    p = ModelParams(12, 1.5, 0.0, 1.0, 0.2, 0.8)
    rho0 = np.linspace(0.1, 0.9, 11)
    tr = integrate(rho0, p, 0.0)
    np.testing.assert_array_equal(tr.values[0], rho0)
    assert tr.times.tolist() == [0.0]


@pytest.mark.parametrize("N,gamma,theta", [(32, 1.5, 0.0), (32, 0.5, -1.0), (64, 1.2, 0.5)])
def test_integrate_matches_eigendecomposition(N, gamma, theta):
    p = ModelParams(N, gamma, theta, 1.0, 0.2, 0.8)
    A, b = linear_system(p)
    lam, V = np.linalg.eigh(A)
    rho0 = np.full(N - 1, 0.5)
    star = np.linalg.solve(A, -b)
    times = np.linspace(0, 0.1, 6)
    tr = integrate(rho0, p, 0.1, times=times)
    for k, t in enumerate(times):
        ref = star + V @ (np.exp(lam * t) * (V.T @ (rho0 - star)))
        assert np.max(np.abs(tr.values[k] - ref)) < 1e-7


def test_integrate_matches_explicit_rk():
    p = ModelParams(10, 0.8, 0.0, 1.0, 0.3, 0.9)
    rho0 = np.linspace(0.0, 1.0, 9)
    times = np.linspace(0, 0.5, 11)
    a = integrate(rho0, p, 0.5, times=times)
    b = integrate_explicit(rho0, p, 0.5, times=times)
    np.testing.assert_allclose(a.values, b.values, atol=1e-7)


def test_integrate_bad_times():
    p = ModelParams(8, 1.5, 0.0, 1.0, 0.2, 0.8)
    with pytest.raises(DomainError):
        integrate(np.zeros(7), p, 1.0, times=[0.5, 0.2])
    with pytest.raises(DomainError):
        integrate(np.zeros(7), p, -1.0)
    with pytest.raises(DomainError):
        integrate(np.zeros(5), p, 1.0)


@pytest.mark.parametrize("N", [32, 64, 128])
def test_reaction_regime_approaches_explicit_solution(N):
    gaps = []
    for n in (N, 2 * N):
        p = ModelParams(n, 0.5, -1.0, 1.0, 0.2, 0.8)
        tr = integrate(np.full(n - 1, 0.5), p, 0.5, times=[0.0, 0.5])
        u = tr.grid
        inner = (u >= 0.1) & (u <= 0.9)
        ref = reaction_solution(0.5, u, 0.5, 1.0, 0.2, 0.8, 0.5)
        gaps.append(np.max(np.abs(tr.values[-1] - ref)[inner]))
    assert gaps[1] < gaps[0]


@given(st.lists(st.floats(0, 1), min_size=15, max_size=15), st.lists(st.floats(0, 1), min_size=15, max_size=15))
@settings(max_examples=10, deadline=None)
def test_comparison_principle(x, y):
    lo, hi = np.minimum(x, y), np.maximum(x, y)
    p = ModelParams(16, 1.3, 0.1, 1.0, 0.3, 0.7)
    times = [0.0, 0.01, 0.05]
    a = integrate(lo, p, 0.05, times=times)
    b = integrate(hi, p, 0.05, times=times)
    assert np.all(a.values <= b.values + 1e-8)
    assert np.all(a.values >= -1e-8) and np.all(b.values <= 1 + 1e-8)


@pytest.mark.parametrize("gamma,theta", [(0.5, -1.0), (1.5, 0.0), (1.5, 0.5), (0.5, 2.0)])
def test_stationary_fixed_point_and_bounds(gamma, theta):
    p = ModelParams(128, gamma, theta, 1.0, 0.2, 0.8)
    s = stationary_profile(p)
    assert np.max(np.abs(drift(s.values, p))) < 1e-10
    assert np.all(s.values >= 0.2 - 1e-12) and np.all(s.values <= 0.8 + 1e-12)


def test_stationary_flat_when_reservoirs_agree():
    s = stationary_profile(ModelParams(64, 1.5, 0.3, 1.0, 0.35, 0.35))
    np.testing.assert_allclose(s.values, 0.35, atol=1e-13)


def test_stationary_reaction_regime_converges_to_v0_over_v1():
    gaps = []
    for N in (128, 256, 512):
        s = stationary_profile(ModelParams(N, 0.5, -1.0, 1.0, 0.2, 0.8))
        u = s.grid
        inner = (u >= 0.1) & (u <= 0.9)
        _, _, v0, v1 = continuum_rates(u, 0.2, 0.8, 0.5)
        gaps.append(np.max(np.abs(s.values - v0 / v1)[inner]))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_stationary_neumann_regime_is_flat():
    s = stationary_profile(ModelParams(512, 0.5, 2.0, 1.0, 0.2, 0.8))
    np.testing.assert_allclose(s.values, 0.5, atol=1e-4)


def test_density_profile_validation():
    with pytest.raises(DomainError):
        DensityProfile(np.array([0.5, 1.2]), 3)
    with pytest.raises(DomainError):
        DensityProfile(np.array([0.5]), 3)


def test_reaction_solution_limits():
    u = np.array([0.1, 0.3, 0.8])
    np.testing.assert_allclose(reaction_solution(lambda x: x, u, 0.0, 1.0, 0.2, 0.8, 0.5), u)
    _, _, v0, v1 = continuum_rates(u, 0.2, 0.8, 0.5)
    np.testing.assert_allclose(reaction_solution(0.5, u, 1e4, 1.0, 0.2, 0.8, 0.5), v0 / v1, atol=1e-12)


def test_reaction_solution_scalar_ode_oracle():
    u, kh, a, b, gamma = 0.3, 1.0, 0.2, 0.8, 0.5
    _, _, v0, v1 = continuum_rates(u, a, b, gamma)
    sol = solve_ivp(lambda t, r: -kh * r * v1 + kh * v0, (0, 1), [0.5], rtol=1e-12, atol=1e-14)
    assert reaction_solution(0.5, u, 1.0, kh, a, b, gamma) == pytest.approx(sol.y[0, -1], abs=1e-6)


def test_reaction_solution_rejects_boundary_and_negative_time():
    with pytest.raises(DomainError):
        reaction_solution(0.5, 0.0, 1.0, 1.0, 0.2, 0.8, 0.5)
    with pytest.raises(DomainError):
        reaction_solution(0.5, 0.5, -1.0, 1.0, 0.2, 0.8, 0.5)


def _constant_traj(c, N=65, times=np.linspace(0, 1, 21)):
    return DensityTrajectory.from_lattice(times, np.full((times.size, N - 1), c), N)


def test_weak_residual_time_zero():
    tr = _constant_traj(0.3)
    G = TestFunction.static(bump(0.2, 0.8), (0.2, 0.8))
    for label in RegimeLabel:
        assert weak_residual(label, tr, G, 0.3, 0.0, 1.0, alpha=0.3, beta=0.3, gamma=1.5) == 0.0


@pytest.mark.parametrize("gamma", [0.5, 1.5])
def test_weak_residual_constant_neumann_symmetric(gamma):
    # int L G = 0 (antisymmetric double integral), so a constant trajectory has zero residual;
    # L G ~ u^{1-gamma} at the edges, hence the graded grid
    tr = DensityTrajectory.from_function(lambda t, u: 0.4 + 0 * u, np.linspace(0, 1, 11), graded_gamma=gamma)
    G = polynomial([0, 1, -1])
    r = weak_residual(R.FRAC_DIFFUSION_NEUMANN, tr, G, 0.4, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=gamma)
    assert r < 1e-8


def test_weak_residual_constant_stationary_dirichlet():
    # alpha = beta = c makes rho = c the solution of every regime
    c = 0.6
    tr = DensityTrajectory.from_function(lambda t, u: c + 0 * u, np.linspace(0, 1, 11))
    G = TestFunction.static(bump(0.2, 0.7), (0.2, 0.7))
    for label in (R.REACTION_DIRICHLET, R.FRAC_REACTION_DIFFUSION_DIRICHLET):
        assert weak_residual(label, tr, G, c, 1.0, 1.0, alpha=c, beta=c, gamma=0.5) < 1e-6


def test_weak_residual_reaction_solution_is_small():
    times = np.linspace(0, 1, 81)
    rho = lambda t, u: reaction_solution(0.9, u, t, 1.0, 0.2, 0.8, 0.5)
    tr = DensityTrajectory.from_function(rho, times)
    G = TestFunction.static(bump(0.15, 0.7), (0.15, 0.7))
    r = weak_residual(R.REACTION_DIRICHLET, tr, G, 0.9, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=0.5)
    assert r < 1e-6
    wrong = weak_residual(R.FRAC_DIFFUSION_NEUMANN, tr, polynomial([0, 1]), 0.9, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=0.5)
    assert wrong > 1e-2


def test_weak_residual_time_dependent_test_function():
    # G(t,u) = e^{-t} b(u) exercises the d/dt G term
    times = np.linspace(0, 1, 81)
    rho = lambda t, u: reaction_solution(0.9, u, t, 1.0, 0.2, 0.8, 0.5)
    tr = DensityTrajectory.from_function(rho, times)
    b = bump(0.15, 0.7)
    G = TestFunction(lambda t, u: np.exp(-t) * b(u), lambda t, u: -np.exp(-t) * b(u), (0.15, 0.7))
    G_fd = TestFunction(lambda t, u: np.exp(-t) * b(u), None, (0.15, 0.7))
    for H in (G, G_fd):
        assert weak_residual(R.REACTION_DIRICHLET, tr, H, 0.9, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=0.5) < 1e-6


def test_weak_residual_support_errors():
    tr = _constant_traj(0.5)
    with pytest.raises(SupportError):
        weak_residual(R.FRAC_DIFFUSION_DIRICHLET, tr, polynomial([0, 1]), 0.5, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=1.5)
    lying = TestFunction.static(bump(0.1, 0.9), (0.3, 0.7))
    with pytest.raises(SupportError):
        weak_residual(R.REACTION_DIRICHLET, tr, lying, 0.5, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=1.5)
    with pytest.raises(SupportError):
        weak_residual(R.REACTION_DIRICHLET, tr, TestFunction.static(bump(0.0, 0.5), (0.0, 0.5)), 0.5, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=1.5)
    # Neumann accepts unrestricted test functions
    weak_residual(R.FRAC_DIFFUSION_NEUMANN, tr, polynomial([0, 1]), 0.5, 1.0, 1.0, alpha=0.2, beta=0.8, gamma=1.5)


def test_weak_residual_off_grid_time():
    tr = _constant_traj(0.5)
    with pytest.raises(DomainError):
        weak_residual(R.FRAC_DIFFUSION_NEUMANN, tr, polynomial([0, 1]), 0.5, 0.123, 1.0, alpha=0.2, beta=0.8, gamma=1.5)


def test_robin_residual_for_boundary_equilibrium():
    # rho = alpha = beta is stationary; the Robin boundary term vanishes too
    tr = DensityTrajectory.from_function(lambda t, u: 0.3 + 0 * u, np.linspace(0, 1, 11), graded_gamma=1.5)
    G = polynomial([0.5, 1, -1])
    r = weak_residual(R.FRAC_DIFFUSION_ROBIN, tr, G, 0.3, 1.0, 1.0, alpha=0.3, beta=0.3, gamma=1.5)
    assert r < 1e-8
    # only the left boundary term survives: kappa m G(0) (alpha - 0.3) t
    r_bad = weak_residual(R.FRAC_DIFFUSION_ROBIN, tr, G, 0.3, 1.0, 1.0, alpha=0.1, beta=0.3, gamma=1.5)
    assert r_bad == pytest.approx(0.5 * 0.2 * M_15, rel=1e-8)


def test_boundary_integrability_finite():
    p = ModelParams(64, 1.5, 0.2, 1.0, 0.2, 0.8)
    tr = integrate(np.full(63, 0.5), p, 0.1, times=np.linspace(0, 0.1, 11))
    val = boundary_integrability(tr, 0.2, 0.8, 1.5)
    assert np.isfinite(val) and val > 0
    assert boundary_integrability(_constant_traj(0.2, times=np.array([0.0])), 0.2, 0.8, 1.5) == 0.0
