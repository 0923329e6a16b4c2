"""Heavy-tailed jump kernel, reservoir tail rates and time scales.

The jump law is p(z) = c_gamma |z|^{-gamma-1} for z != 0.  ``c_gamma`` is
chosen so that p sums to one, i.e. ``c_gamma = 1 / (2 zeta(gamma + 1))``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

# Below this index the Hurwitz tail is summed directly, above it the
# Euler-Maclaurin expansion is accurate to ~1e-17.
_EM_START = 32


class Variant(str, enum.Enum):
    FULL = "full"
    ONE_SITE = "one-site"
    DIFFUSIVE_BULK = "diffusive-bulk"


def check_gamma(gamma):
    if not (0.0 < gamma < 2.0) or gamma == 1.0:
        raise DomainError(f"gamma must lie in (0, 2) without 1, got {gamma!r}")


@dataclass(frozen=True)
class ModelParams:
    """One process instance: lattice size, exponents, reservoir parameters."""

    N: int
    gamma: float
    theta: float = 0.0
    kappa: float = 1.0
    alpha: float = 0.5
    beta: float = 0.5
    variant: Variant = Variant.FULL

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if int(self.N) != self.N or self.N < 2:
            raise DomainError(f"N must be an integer >= 2, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        check_gamma(self.gamma)
        if not math.isfinite(self.theta):
            raise DomainError(f"theta must be finite, got {self.theta!r}")
        if not self.kappa > 0:
            raise DomainError(f"kappa must be positive, got {self.kappa!r}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")

    @property
    def sites(self):
        return np.arange(1, self.N)

    @property
    def grid(self):
        """Macroscopic positions x/N of the bulk sites."""
        return self.sites / self.N

    @property
    def reservoir_strength(self):
        return self.kappa * float(self.N) ** (-self.theta)

    def time_scale(self):
        return variant_time_scale(self.variant, self.N, self.theta, self.gamma)

    def replace(self, **changes):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return ModelParams(**data)


# ---------------------------------------------------------------------------
# zeta-type series


def hurwitz_tail(s, a):
    """Sum of n**-s over integers n >= a (a >= 1, s > 1)."""
    return float(_hurwitz_tail_ld(s, a))


def _hurwitz_tail_ld(s, a):
    if s <= 1.0:
        raise DomainError(f"series diverges for s = {s!r}")
    a = int(a)
    if a < 1:
        raise DomainError(f"tail start must be >= 1, got {a}")
    b = max(a, _EM_START)
    s = np.longdouble(s)
    head = np.longdouble(0.0)
    if b > a:
        n = np.arange(a, b, dtype=np.longdouble)
        head = np.sum(n[::-1] ** -s)
    bb = np.longdouble(b)
    em = (
        bb ** (1 - s) / (s - 1)
        + bb**-s / 2
        + s * bb ** (-s - 1) / 12
        - s * (s + 1) * (s + 2) * bb ** (-s - 3) / 720
        + s * (s + 1) * (s + 2) * (s + 3) * (s + 4) * bb ** (-s - 5) / 30240
    )
    return head + em


def zeta(s):
    return hurwitz_tail(s, 1)


def tail_integral_bounds(s, Z):
    """Integral bracket for sum_{n > Z} n**-s: (lower, upper)."""
    return (Z + 1.0) ** (1.0 - s) / (s - 1.0), float(Z) ** (1.0 - s) / (s - 1.0)


def normalization_constant(gamma):
    """c_gamma such that sum_{z != 0} c_gamma |z|^{-gamma-1} = 1."""
    check_gamma(gamma)
    return float(1 / (2 * _hurwitz_tail_ld(gamma + 1.0, 1)))


def partial_mass(gamma, Z):
    """Mass of p on 1 <= |z| <= Z, the analytic remainder, and its bracket.

    Returns ``(partial, tail, (tail_lo, tail_hi))``; ``partial + tail`` is
    the full normalization and ``partial + tail_lo <= 1 <= partial + tail_hi``.
    """
    c = normalization_constant(gamma)
    s = gamma + 1.0
    z = np.arange(1, int(Z) + 1, dtype=float)
    partial = 2.0 * c * float(np.sum(z[::-1] ** -s))
    tail = 2.0 * c * hurwitz_tail(s, int(Z) + 1)
    lo, hi = tail_integral_bounds(s, int(Z))
    return partial, tail, (2.0 * c * lo, 2.0 * c * hi)


# ---------------------------------------------------------------------------
# sampling


class AliasTable:
    """Walker/Vose alias table for a finite discrete law on 0..n-1."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be a nonempty nonnegative vector with positive mass")
        n = w.size
        scaled = w * (n / w.sum())
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            lo = small.pop()
            hi = large.pop()
            prob[lo] = scaled[lo]
            alias[lo] = hi
            scaled[hi] = scaled[hi] + scaled[lo] - 1.0
            if scaled[hi] < 1.0:
                small.append(hi)
            else:
                large.append(hi)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias
        self.n = n
        self._prob_list = prob.tolist()
        self._alias_list = alias.tolist()

    def lookup(self, u_col, u_acc):
        """Map two uniforms to an index (scalar fast path)."""
        i = int(u_col * self.n)
        if i == self.n:
            i -= 1
        return i if u_acc < self._prob_list[i] else self._alias_list[i]

    def sample(self, rng, size=None):
        u = rng.random((2,) if size is None else (2, size))
        i = np.minimum((u[0] * self.n).astype(np.int64), self.n - 1)
        out = np.where(u[1] < self.prob[i], i, self.alias[i])
        return int(out) if size is None else out

    def probabilities(self):
        """Exact law encoded by the table (for checking)."""
        q = self.prob / self.n
        out = q.copy()
        np.add.at(out, self.alias, (1.0 - self.prob) / self.n)
        return out


# ---------------------------------------------------------------------------
# the kernel


def _frozen(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JumpKernel:
    """Precomputed jump law on a lattice of size N.

    ``p_table[z]`` holds p(z) for 0 <= z <= N-1 (``p_table[0] == 0``);
    ``cum_left[x-1]`` and ``cum_right[x-1]`` hold r^-_N(x/N), r^+_N(x/N) for
    the bulk sites x = 1..N-1.
    """

    gamma: float
    N: int
    c_gamma: float
    m: float
    p_table: np.ndarray = field(repr=False)
    cum_left: np.ndarray = field(repr=False)
    cum_right: np.ndarray = field(repr=False)
    sampler: AliasTable | None = field(repr=False, default=None)

    second_moment_finite = False  # sigma^2 = infinity for every gamma < 2

    @classmethod
    def build(cls, gamma, N):
        check_gamma(gamma)
        N = int(N)
        if N < 2:
            raise DomainError(f"N must be >= 2, got {N}")
        s = gamma + 1.0
        c = normalization_constant(gamma)
        z = np.arange(N, dtype=float)
        p = np.zeros(N)
        p[1:] = c * z[1:] ** -s
        # r^-_N(x/N) = c * sum_{y >= x} y^-s, accumulated from the far end
        zl = np.arange(1, N, dtype=np.longdouble)
        terms = zl[::-1] ** -np.longdouble(s)
        acc = np.cumsum(terms)[::-1] + _hurwitz_tail_ld(s, N)
        left = (np.longdouble(c) * acc).astype(float)
        right = left[::-1].copy()
        sampler = AliasTable(p[1 : N - 1]) if N >= 3 else None
        return cls(
            gamma=float(gamma),
            N=N,
            c_gamma=c,
            m=mean_positive_jump_value(gamma),
            p_table=_frozen(p),
            cum_left=_frozen(left),
            cum_right=_frozen(right),
            sampler=sampler,
        )

    def p(self, z):
        return jump_prob(z, self)


def mean_positive_jump_value(gamma):
    check_gamma(gamma)
    if gamma <= 1.0:
        return math.inf
    return normalization_constant(gamma) * zeta(gamma)


def jump_prob(z, kernel):
    """p(z) = c_gamma |z|^{-gamma-1} for z != 0, p(0) = 0 (array friendly)."""
    za = np.abs(np.asarray(z, dtype=float))
    with np.errstate(divide="ignore"):
        out = np.where(za > 0, kernel.c_gamma * za ** -(kernel.gamma + 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def mean_positive_jump(kernel):
    """m = sum_{z >= 1} z p(z); ``math.inf`` when gamma <= 1."""
    return kernel.m


def _site_index(x, N):
    x = int(x)
    if not 1 <= x <= N - 1:
        raise DomainError(f"site {x} outside the bulk 1..{N - 1}")
    return x - 1


def reservoir_tail_left(x, kernel):
    """r^-_N(x/N) = sum_{y >= x} p(y)."""
    return float(kernel.cum_left[_site_index(x, kernel.N)])


def reservoir_tail_right(x, kernel):
    """r^+_N(x/N) = r^-_N((N - x)/N)."""
    return float(kernel.cum_right[_site_index(x, kernel.N)])


def continuum_rates(u, alpha, beta, gamma):
    """(r^-(u), r^+(u), V0(u), V1(u)) for u in (0, 1); vectorized in u."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("continuum rates are singular outside the open interval (0, 1)")
    k = normalization_constant(gamma) / gamma
    r_minus = k * u**-gamma
    r_plus = k * (1.0 - u) ** -gamma
    v1 = r_minus + r_plus
    v0 = alpha * r_minus + beta * r_plus
    if u.ndim == 0:
        return float(r_minus), float(r_plus), float(v0), float(v1)
    return r_minus, r_plus, v0, v1


def time_scale(N, theta, gamma):
    """Theta(N) = N^{gamma + theta} if theta < 0 else N^gamma."""
    return float(N) ** (gamma + theta) if theta < 0 else float(N) ** gamma


def variant_time_scale(variant, N, theta, gamma):
    variant = Variant(variant)
    if variant is Variant.FULL:
        return time_scale(N, theta, gamma)
    if variant is Variant.ONE_SITE:
        return float(N) ** gamma
    # nearest-neighbour bulk: diffusive scale unless the reservoirs dominate
    if theta >= 2.0 - gamma:
        return float(N) ** 2
    return float(N) ** (gamma + theta)


# ---------------------------------------------------------------------------
# generator coefficients shared by the simulator and the density ODE


@dataclass(frozen=True)
class ModelRates:
    """Microscopic rate coefficients of one variant.

    ``pair[d]`` is the exchange rate of an unordered pair at distance d
    (``pair[0] == 0``); ``left``/``right`` are the per-site reservoir weights
    multiplying c_x(eta; alpha) and c_x(eta; beta).  ``scale`` is Theta(N).
    """

    params: ModelParams
    pair: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    scale: float

    @classmethod
    def from_params(cls, params, kernel=None):
        N = params.N
        variant = params.variant
        if kernel is None:
            kernel = JumpKernel.build(params.gamma, N)
        if kernel.N != N or kernel.gamma != params.gamma:
            raise DomainError("kernel was built for a different (gamma, N)")
        strength = params.reservoir_strength
        if variant is Variant.DIFFUSIVE_BULK:
            pair = np.zeros(N)
            if N > 2:
                pair[1] = 1.0
        else:
            pair = np.array(kernel.p_table, dtype=float)
        if variant is Variant.ONE_SITE:
            left = np.zeros(N - 1)
            right = np.zeros(N - 1)
            left[0] = strength
            right[-1] = strength
        else:
            left = strength * np.asarray(kernel.cum_left)
            right = strength * np.asarray(kernel.cum_right)
        return cls(params, _frozen(pair), _frozen(left), _frozen(right), params.time_scale())

    def pair_matrix(self):
        """Dense (N-1) x (N-1) matrix of pair exchange rates."""
        n = self.params.N - 1
        idx = np.arange(n)
        return self.pair[np.abs(idx[:, None] - idx[None, :])]

    def reservoir_rate(self, occupied):
        """Flip rate of each site given its occupation (0/1 array)."""
        a, b = self.params.alpha, self.params.beta
        occ = np.asarray(occupied, dtype=float)
        return self.left * np.where(occ > 0, 1.0 - a, a) + self.right * np.where(occ > 0, 1.0 - b, b)
