"""Monte Carlo observables: empirical measure, block averages, ensembles, energy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kernel import normalization_constant


def _occupation(config):
    occ = getattr(config, "occupancy", config)
    return np.asarray(occ, dtype=float)


def empirical_pairing(config, G):
    """<pi^N, G> = (N - 1)^{-1} sum_x G(x/N) eta(x)."""
    eta = _occupation(config)
    N = eta.shape[-1] + 1
    u = np.arange(1, N) / N
    g = np.broadcast_to(np.asarray(G(u), dtype=float), u.shape)
    return float(np.sum(g * eta) / (N - 1)) if eta.ndim == 1 else (eta @ g) / (N - 1)


def window_size(ell):
    """Integer width, rounding non-integer widths up."""
    ell_int = math.ceil(ell - 1e-12)
    if ell_int < 1:
        raise DomainError(f"block width must be positive, got {ell}")
    return ell_int


def block_average(config, x, ell, direction="right"):
    """Average of eta over the ell sites right of x (x+1..x+ell) or left of x.

    Works on occupations, on real-valued profiles and, along the last axis,
    on stacks of them.
    """
    eta = _occupation(config)
    n = eta.shape[-1]
    ell = window_size(ell)
    if direction == "right":
        if x < 0 or x + ell > n:
            raise DomainError(f"window {x + 1}..{x + ell} leaves the bulk 1..{n}")
        block = eta[..., x : x + ell]
    elif direction == "left":
        if x > n + 1 or x - ell < 1:
            raise DomainError(f"window {x - ell}..{x - 1} leaves the bulk 1..{n}")
        block = eta[..., x - ell - 1 : x - 1]
    else:
        raise DomainError(f"direction must be 'left' or 'right', got {direction!r}")
    out = block.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _times_and_profiles(trajectory):
    if isinstance(trajectory, tuple):
        times, profiles = trajectory
    else:
        times = getattr(trajectory, "sample_times", None)
        if times is None:
            times = trajectory.times
        profiles = getattr(trajectory, "snapshots", None)
        if profiles is None:
            profiles = trajectory.values
    return np.asarray(times, dtype=float), np.asarray(profiles, dtype=float)


def boundary_gap_statistic(trajectory, epsilon, side, target):
    """|int_0^T (target - boundary block average) ds| with width ceil(eps N).

    ``trajectory`` is a simulation record, a density trajectory or a pair
    (times, profiles); profiles are indexed by site along the last axis.
    """
    times, profiles = _times_and_profiles(trajectory)
    N = profiles.shape[-1] + 1
    ell = window_size(epsilon * N)
    if side == 0:
        avg = block_average(profiles, 0, ell, "right")
    elif side == 1:
        avg = block_average(profiles, N, ell, "left")
    else:
        raise DomainError("side must be 0 or 1")
    if times.size < 2:
        return 0.0
    return abs(float(np.trapezoid(target - np.atleast_1d(avg), times)))


@dataclass
class ReplicaEnsemble:
    """Profiles of R replicas sampled at common times.

    ``profiles`` has shape (R, len(sample_times), N - 1); replicas are stored
    in increasing ``replica_ids`` order so merging is order insensitive.
    """

    sample_times: np.ndarray
    profiles: np.ndarray = field(repr=False)
    replica_ids: np.ndarray
    seeds: list = field(default_factory=list)
    params: object = None

    @property
    def R(self):
        return self.profiles.shape[0]

    @classmethod
    def from_records(cls, records, replica_ids=None):
        records = list(records)
        if not records:
            raise DomainError("an ensemble needs at least one replica")
        times = np.asarray(records[0].sample_times)
        params = records[0].params
        for rec in records[1:]:
            if rec.params != params:
                raise DomainError("replicas do not share parameters")
            if rec.sample_times.shape != times.shape or np.any(rec.sample_times != times):
                raise DomainError("replicas do not share sample times")
        ids = np.arange(len(records)) if replica_ids is None else np.asarray(replica_ids)
        order = np.argsort(ids, kind="stable")
        profiles = np.stack([records[i].snapshots for i in order])
        seeds = [records[i].seed for i in order]
        return cls(times, profiles, ids[order], seeds, params)

    def merge(self, other):
        if self.sample_times.shape != other.sample_times.shape or np.any(self.sample_times != other.sample_times):
            raise DomainError("mismatched sample grids")
        if self.params is not None and other.params is not None and self.params != other.params:
            raise DomainError("replicas do not share parameters")
        ids = np.concatenate([self.replica_ids, other.replica_ids])
        order = np.argsort(ids, kind="stable")
        profiles = np.concatenate([self.profiles, other.profiles])[order]
        seeds = [(self.seeds + other.seeds)[i] for i in order] if self.seeds and other.seeds else []
        return ReplicaEnsemble(self.sample_times, profiles, ids[order], seeds, self.params or other.params)


def ensemble_mean_profile(ensemble, t):
    """Per-site sample mean and standard error (std with ddof=1, over sqrt R)."""
    if ensemble.R < 2:
        raise DomainError("standard errors need at least two replicas")
    k = int(np.argmin(np.abs(ensemble.sample_times - t)))
    if abs(ensemble.sample_times[k] - t) > 1e-12 * max(1.0, abs(t)):
        raise DomainError(f"time {t} is not on the ensemble's sample grid")
    x = ensemble.profiles[:, k, :].astype(float)
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(ensemble.R)
    return mean, se


def lattice_energy(values, gamma):
    """Riemann sum of (c/2) iint (rho(u)-rho(v))^2 |u-v|^{-1-gamma} on the grid x/N."""
    rho = np.asarray(values, dtype=float)
    n = rho.shape[-1]
    N = n + 1
    c = normalization_constant(gamma)
    d = np.arange(1, n, dtype=float)
    weights = d ** -(1.0 + gamma)
    total = np.zeros(rho.shape[:-1])
    for k, w in enumerate(weights, start=1):
        diff = rho[..., k:] - rho[..., :-k]
        total = total + w * np.sum(diff * diff, axis=-1)
    # ordered pairs count twice, and each cell has area N^{-2}
    return c * float(N) ** (gamma - 1.0) * total


def discrete_energy(trajectory, gamma):
    """int_0^T ||rho_t||^2_{gamma/2} dt with the lattice energy and the trapezoid rule."""
    times, profiles = _times_and_profiles(trajectory)
    energy = lattice_energy(profiles, gamma)
    if times.size < 2:
        return 0.0
    return float(np.trapezoid(energy, times))
