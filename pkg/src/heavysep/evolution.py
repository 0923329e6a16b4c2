"""Deterministic density evolution, stationary profiles and weak residuals.

For the symmetric dynamics the expected occupations rho(x) = E[eta(x)]
satisfy a closed linear system

    d rho / dt = Theta(N) [ (K - diag(K 1)) rho - diag(l + r) rho + alpha l + beta r ],

where K holds the pair exchange rates and l, r the reservoir weights.  The
matrix is symmetric with nonnegative off-diagonal entries, so the flow is
order preserving and keeps [0, 1]^{N-1} invariant.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import simpson, solve_ivp

from .errors import DomainError, NumericalError, SupportError
from .kernel import ModelRates, check_gamma, continuum_rates, mean_positive_jump_value
from .operators import DEFAULT_SPEC, composite_rule, graded_rule, regional_frac_laplacian

LINE_TOL = 1e-9
SAFETY = 0.5


class RegimeLabel(str, enum.Enum):
    REACTION_DIRICHLET = "Reaction-Dirichlet"
    FRAC_REACTION_DIFFUSION_DIRICHLET = "FracReactionDiffusion-Dirichlet"
    FRAC_DIFFUSION_DIRICHLET = "FracDiffusion-Dirichlet"
    FRAC_DIFFUSION_ROBIN = "FracDiffusion-Robin"
    FRAC_DIFFUSION_NEUMANN = "FracDiffusion-Neumann"


def classify_regime(gamma, theta):
    """Hydrodynamic regime of the full model at (gamma, theta).

    The critical lines theta = 0 and theta = gamma - 1 are matched with an
    absolute tolerance of 1e-9 so that grid values computed in floating
    point land on them.
    """
    check_gamma(gamma)
    if not math.isfinite(theta):
        raise DomainError(f"theta must be finite, got {theta!r}")
    if abs(theta) <= LINE_TOL:
        return RegimeLabel.FRAC_REACTION_DIFFUSION_DIRICHLET
    if theta < 0:
        return RegimeLabel.REACTION_DIRICHLET
    if gamma > 1.0:
        if abs(theta - (gamma - 1.0)) <= LINE_TOL:
            return RegimeLabel.FRAC_DIFFUSION_ROBIN
        if theta < gamma - 1.0:
            return RegimeLabel.FRAC_DIFFUSION_DIRICHLET
    return RegimeLabel.FRAC_DIFFUSION_NEUMANN


DIRICHLET_TYPE = frozenset(
    {
        RegimeLabel.REACTION_DIRICHLET,
        RegimeLabel.FRAC_REACTION_DIFFUSION_DIRICHLET,
        RegimeLabel.FRAC_DIFFUSION_DIRICHLET,
    }
)


# ---------------------------------------------------------------------------
# lattice ODE


def linear_system(params, kernel=None):
    """(A, b) with d rho/dt = A rho + b, including the factor Theta(N)."""
    rates = ModelRates.from_params(params, kernel)
    K = rates.pair_matrix()
    M = K - np.diag(K.sum(axis=1) + rates.left + rates.right)
    b = params.alpha * rates.left + params.beta * rates.right
    return rates.scale * M, rates.scale * b


def drift(rho, params, kernel=None):
    """Time derivative of the expected occupations at profile ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (params.N - 1,):
        raise DomainError(f"profile must have length {params.N - 1}")
    A, b = linear_system(params, kernel)
    return A @ rho + b


@dataclass
class DensityProfile:
    values: np.ndarray
    N: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.N - 1,):
            raise DomainError("profile length must be N - 1")
        if np.any(self.values < -1e-9) or np.any(self.values > 1 + 1e-9):
            raise DomainError("density values must lie in [0, 1]")

    @property
    def grid(self):
        return np.arange(1, self.N) / self.N


@dataclass
class DensityTrajectory:
    """Density sampled at ``times`` on spatial nodes ``grid``.

    ``weights`` are the spatial quadrature weights used for L^2 pairings;
    lattice trajectories use 1/(N-1), continuum ones a Gauss rule.
    """

    times: np.ndarray
    values: np.ndarray = field(repr=False)
    grid: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    params: object = None
    steps: int = 0

    @classmethod
    def from_lattice(cls, times, values, N, params=None, steps=0):
        grid = np.arange(1, N) / N
        return cls(np.asarray(times, float), np.asarray(values, float), grid, np.full(N - 1, 1.0 / (N - 1)), params, steps)

    @classmethod
    def from_function(cls, rho, times, panels=64, order=8, params=None, graded_gamma=None):
        """Sample rho(t, u) on a composite Gauss grid of (0, 1).

        With ``graded_gamma`` the grid is graded toward both ends instead,
        which resolves the u^{1-gamma} edge behaviour of L G for gamma > 1
        (needed by the Neumann and Robin functionals with non-vanishing G).
        """
        if graded_gamma is None:
            grid, weights = composite_rule(0.0, 1.0, panels, order)
        else:
            grid, weights = graded_rule(graded_gamma)
        times = np.asarray(times, float)
        values = np.array([np.broadcast_to(rho(t, grid), grid.shape) for t in times], dtype=float)
        return cls(times, values, grid, weights, params)

    def index(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not a sample time of the trajectory")
        return k

    def at(self, t):
        return self.values[self.index(t)]

    def pairing(self, k, G):
        return float(np.sum(self.weights * self.values[k] * G))

    def boundary_traces(self):
        """Linear extrapolation of the two outermost nodes to u = 0 and u = 1."""
        u, v = self.grid, self.values
        left = v[:, 0] + (v[:, 0] - v[:, 1]) * (u[0] - 0.0) / (u[1] - u[0])
        right = v[:, -1] + (v[:, -1] - v[:, -2]) * (1.0 - u[-1]) / (u[-1] - u[-2])
        return left, right


def _default_times(T, n=101):
    return np.array([0.0]) if T == 0 else np.linspace(0.0, T, n)


def _check_times(times, T):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > T + 1e-15:
        raise DomainError("output times must be strictly increasing inside [0, T]")
    return times


class _TrapezoidStepper:
    """Trapezoid steps for y' = A y + b with cached LU factors."""

    def __init__(self, A, b):
        self.A = A
        self.b = b
        self.eye = np.eye(A.shape[0])
        self.cache = {}

    def step(self, y, h):
        entry = self.cache.get(h)
        if entry is None:
            lhs = self.eye - 0.5 * h * self.A
            lu = scipy.linalg.lu_factor(lhs, check_finite=False)
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
                raise NumericalError("singular trapezoid step matrix", {"h": h})
            entry = (lu, self.eye + 0.5 * h * self.A)
            if len(self.cache) > 64:
                self.cache.clear()
            self.cache[h] = entry
        lu, rhs = entry
        return scipy.linalg.lu_solve(lu, rhs @ y + h * self.b, check_finite=False)


def integrate(rho0, params, T, times=None, tol=1e-8, kernel=None):
    """Solve the lattice density ODE with adaptive implicit trapezoid steps.

    Each step is compared with two half steps; the step is accepted when the
    Richardson estimate |y_half - y_full| / 3 is below ``SAFETY * tol`` and
    the two-half-step value is kept.  Step sizes are T 2^{-k} (except when
    landing on an output time) so LU factors are reused.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if rho0.shape != (params.N - 1,):
        raise DomainError(f"initial profile must have length {params.N - 1}")
    if T < 0:
        raise DomainError("horizon must be nonnegative")
    times = _default_times(T) if times is None else _check_times(times, T)
    A, b = linear_system(params, kernel)
    stepper = _TrapezoidStepper(A, b)
    out = np.empty((times.size, rho0.size))
    y = rho0.copy()
    t = 0.0
    h = T / 2**10 if T > 0 else 0.0
    steps = 0
    for k, target in enumerate(times):
        while target - t > 1e-14 * max(1.0, target):
            hh = min(h, target - t)
            full = stepper.step(y, hh)
            half = stepper.step(stepper.step(y, hh / 2), hh / 2)
            err = float(np.max(np.abs(half - full))) / 3.0
            if not np.isfinite(err):
                raise NumericalError("non-finite state in integrate", {"t": t})
            if err <= SAFETY * tol:
                y = half
                t += hh
                steps += 1
                if err < SAFETY * tol / 16 and hh == h and h < T:
                    h *= 2
            else:
                if hh < h:
                    h = hh
                h /= 2
                if h < 1e-300:
                    raise NumericalError("step size underflow", {"t": t})
        t = target
        out[k] = y
    return DensityTrajectory.from_lattice(times, out, params.N, params, steps)


def integrate_explicit(rho0, params, T, times=None, rtol=1e-10, atol=1e-12, kernel=None):
    """Cross-check path: explicit Runge-Kutta (RK45), suitable for small N."""
    rho0 = np.asarray(rho0, dtype=float)
    times = _default_times(T) if times is None else _check_times(times, T)
    A, b = linear_system(params, kernel)
    if T == 0:
        return DensityTrajectory.from_lattice(times, rho0[None, :].copy(), params.N, params)
    sol = solve_ivp(lambda _t, y: A @ y + b, (0.0, T), rho0, method="RK45", t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalError("explicit integration failed", {"message": sol.message})
    return DensityTrajectory.from_lattice(times, sol.y.T, params.N, params, int(sol.nfev))


def stationary_profile(params, kernel=None):
    """Unique zero of the drift, by a dense O(N^3) solve."""
    A, b = linear_system(params, kernel)
    try:
        rho = np.linalg.solve(A, -b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("stationary solve failed", {"N": params.N}) from exc
    if not np.all(np.isfinite(rho)):
        raise NumericalError("non-finite stationary profile", {"N": params.N})
    return DensityProfile(rho, params.N)


# ---------------------------------------------------------------------------
# continuum objects


def _profile_values(g, u):
    u = np.asarray(u, dtype=float)
    if callable(g):
        return np.broadcast_to(np.asarray(g(u), dtype=float), u.shape)
    return np.full(u.shape, float(g))


def reaction_solution(g, u, t, kappa_hat, alpha, beta, gamma):
    """Explicit solution V0/V1 + (g - V0/V1) exp(-t kappa_hat V1) of the reaction equation."""
    if np.any(np.asarray(t) < 0):
        raise DomainError("time must be nonnegative")
    _, _, v0, v1 = continuum_rates(u, alpha, beta, gamma)
    eq = v0 / v1
    out = eq + (_profile_values(g, u) - eq) * np.exp(-np.asarray(t, dtype=float) * kappa_hat * v1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TestFunction:
    """Time-dependent test function G(t, u).

    ``support`` is an interval [a, b] inside (0, 1) that contains the
    support of every G_t, or None for functions without a support claim.
    ``dt`` is the time derivative; when absent a central difference is used.
    """

    __test__ = False  # not a pytest class

    value: object
    dt: object = None
    support: tuple | None = None

    @classmethod
    def static(cls, f, support=None):
        return cls(lambda t, u: f(u), lambda t, u: np.zeros_like(np.asarray(u, float)), support)

    def __call__(self, t, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.asarray(self.value(t, u), dtype=float), u.shape)

    def time_derivative(self, t, u, h=1e-5):
        if self.dt is not None:
            return np.broadcast_to(np.asarray(self.dt(t, u), dtype=float), np.shape(u))
        return (self(t + h, u) - self(t - h, u)) / (2.0 * h)

    def at_time(self, t):
        return lambda u: self(t, u)


def bump(a=0.2, b=0.8):
    """Smooth function supported in [a, b], equal to 1 at the midpoint."""
    mid, half = 0.5 * (a + b), 0.5 * (b - a)

    def f(u):
        x = (np.asarray(u, dtype=float) - mid) / half
        inside = np.abs(x) < 1.0
        out = np.zeros_like(x)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
        return out

    return f


def _check_support(G, traj):
    if G.support is None:
        raise SupportError("this regime requires a test function compactly supported in (0, 1)")
    a, b = G.support
    if not 0.0 < a < b < 1.0:
        raise SupportError(f"support {G.support} is not inside (0, 1)")
    outside = (traj.grid < a) | (traj.grid > b)
    for t in (traj.times[0], traj.times[-1]):
        if np.any(np.abs(G(t, traj.grid[outside])) > 1e-14):
            raise SupportError("test function does not vanish outside its declared support")


def weak_residual(
    label,
    traj,
    G,
    g,
    t,
    kappa_hat,
    *,
    alpha,
    beta,
    gamma,
    m=None,
    spec=DEFAULT_SPEC,
):
    """|F(t, rho, G, g)| for the weak formulation of regime ``label``.

    Time integrals use Simpson's rule on the trajectory sample times up to
    ``t``; spatial pairings use the trajectory's own quadrature weights.
    """
    label = RegimeLabel(label)
    if not isinstance(G, TestFunction):
        G = TestFunction.static(G)
    if label in DIRICHLET_TYPE:
        _check_support(G, traj)
    k_end = traj.index(t)
    times = traj.times[: k_end + 1]
    u = traj.grid
    w = traj.weights
    g_vals = _profile_values(g, u)
    boundary_term = float(np.sum(w * traj.values[k_end] * G(t, u)) - np.sum(w * g_vals * G(0.0, u)))
    if k_end == 0:
        return abs(boundary_term)

    need_v = label in (RegimeLabel.REACTION_DIRICHLET, RegimeLabel.FRAC_REACTION_DIFFUSION_DIRICHLET)
    if need_v:
        _, _, v0, v1 = continuum_rates(u, alpha, beta, gamma)
    integrand = np.empty(times.size)
    for k, s in enumerate(times):
        Gs = G(s, u)
        rho = traj.values[k]
        val = np.sum(w * rho * G.time_derivative(s, u))
        if label is RegimeLabel.REACTION_DIRICHLET:
            val -= kappa_hat * np.sum(w * rho * Gs * v1)
            val += kappa_hat * np.sum(w * Gs * v0)
        else:
            lap = regional_frac_laplacian(G.at_time(s), u, gamma, spec)
            val += np.sum(w * rho * lap)
            if need_v:
                val -= kappa_hat * np.sum(w * rho * Gs * v1)
                val += kappa_hat * np.sum(w * Gs * v0)
        integrand[k] = val
    if label is RegimeLabel.FRAC_DIFFUSION_ROBIN:
        m_val = mean_positive_jump_value(gamma) if m is None else m
        left, right = traj.boundary_traces()
        g0 = np.array([G(s, np.array([0.0]))[0] for s in times])
        g1 = np.array([G(s, np.array([1.0]))[0] for s in times])
        integrand += kappa_hat * m_val * (g0 * (alpha - left[: k_end + 1]) + g1 * (beta - right[: k_end + 1]))
    integral = simpson(integrand, x=times) if times.size > 2 else np.trapezoid(integrand, times)
    return abs(boundary_term - float(integral))


def boundary_integrability(traj, alpha, beta, gamma):
    """int int (alpha - rho)^2 u^{-gamma} + (beta - rho)^2 (1-u)^{-gamma} du dt."""
    u = traj.grid
    w = traj.weights
    per_time = np.sum(
        w * ((alpha - traj.values) ** 2 * u**-gamma + (beta - traj.values) ** 2 * (1.0 - u) ** -gamma), axis=1
    )
    if traj.times.size == 1:
        return 0.0
    return float(simpson(per_time, x=traj.times))
