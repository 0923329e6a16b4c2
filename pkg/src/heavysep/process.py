"""Event-driven simulation of the exclusion process with long jumps and reservoirs.

Times handed to callers are macroscopic: the microscopic clock is divided by
Theta(N).  Two interchangeable ways of drawing bulk exchanges exist:

* ``"exact"`` keeps, for every site, its discordant pair mass
  D(x) = sum_y pair(|y - x|) 1{eta(x) != eta(y)} in a Fenwick tree.
  Updates are O(N), so this is only used on small lattices.
* ``"thinning"`` lets every site ring at the constant rate
  q = sum_{d=1}^{N-2} pair(d), draws a signed distance from an alias table and
  discards proposals that leave the bulk or hit an equal occupation.  No bulk
  bookkeeping is needed at all.

Both give every unordered discordant pair {x, y} the rate pair(|y - x|).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, NumericalError
from .kernel import AliasTable, JumpKernel, ModelParams, ModelRates, Variant

EXACT_MAX_N = 32
REBUILD_EVERY = 1_000_000
_BLOCK = 4096

Observer = Callable[[float, np.ndarray], None]


class Event(NamedTuple):
    kind: str  # "exchange" or "flip"
    x: int
    y: int | None = None


class FenwickTree:
    """Binary indexed tree over nonnegative floats with prefix search."""

    def __init__(self, values):
        self.values = [float(v) for v in values]
        self.n = len(self.values)
        self._top = 1 << max(self.n.bit_length() - 1, 0)
        self.rebuild()

    def rebuild(self):
        tree = [0.0] * (self.n + 1)
        for i, v in enumerate(self.values, start=1):
            tree[i] += v
            j = i + (i & -i)
            if j <= self.n:
                tree[j] += tree[i]
        self.tree = tree
        self.total = math.fsum(self.values)

    def set(self, i, value):
        delta = value - self.values[i]
        if delta == 0.0:
            return
        self.values[i] = value
        self.total += delta
        tree = self.tree
        j = i + 1
        n = self.n
        while j <= n:
            tree[j] += delta
            j += j & -j

    def prefix(self, i):
        """Sum of the first i values."""
        s = 0.0
        tree = self.tree
        while i > 0:
            s += tree[i]
            i -= i & -i
        return s

    def find(self, target):
        """Smallest index i with prefix(i + 1) > target (clamped to a positive leaf)."""
        pos = 0
        step = self._top
        tree = self.tree
        n = self.n
        while step:
            nxt = pos + step
            if nxt <= n and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        if pos >= n:
            pos = n - 1
        # rounding can land on a zero-rate leaf; walk to a live one
        values = self.values
        while pos > 0 and values[pos] <= 0.0:
            pos -= 1
        while pos < n - 1 and values[pos] <= 0.0:
            pos += 1
        return pos


@dataclass
class Configuration:
    """Occupation state on the bulk {1, ..., N-1}; index x-1 holds site x."""

    occupancy: np.ndarray
    particle_count: int = -1

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 1 or occ.size < 1 or not np.all((occ == 0) | (occ == 1)):
            raise DomainError("occupancy must be a nonempty 0/1 vector")
        self.occupancy = occ.astype(np.uint8)
        self.particle_count = int(self.occupancy.sum())

    @property
    def N(self):
        return self.occupancy.size + 1

    def __getitem__(self, x):
        return int(self.occupancy[x - 1])

    def flip(self, x):
        i = x - 1
        self.occupancy[i] ^= 1
        self.particle_count += 1 if self.occupancy[i] else -1

    def exchange(self, x, y):
        o = self.occupancy
        o[x - 1], o[y - 1] = o[y - 1], o[x - 1]

    def apply(self, event):
        if event.kind == "flip":
            self.flip(event.x)
        else:
            self.exchange(event.x, event.y)

    def copy(self):
        return Configuration(self.occupancy.copy())

    def view(self):
        v = self.occupancy.view()
        v.setflags(write=False)
        return v


def sample_initial(g, N, rng):
    """Bernoulli product configuration with P(eta(x) = 1) = g(x/N); g may be a constant."""
    rng = np.random.default_rng(rng)
    u = np.arange(1, N) / N
    prob = np.broadcast_to(np.asarray(g(u) if callable(g) else g, dtype=float), u.shape)
    if np.any(~np.isfinite(prob)) or np.any((prob < 0.0) | (prob > 1.0)):
        raise DomainError("initial profile must take values in [0, 1]")
    return Configuration((rng.random(N - 1) < prob).astype(np.uint8))


class RateTable:
    """Event rates of one configuration, with O(log N) reservoir sampling.

    Stored rates are microscopic; multiply totals by ``scale`` (Theta(N)) to
    obtain macroscopic rates.
    """

    def __init__(self, config, rates, mode="auto"):
        self.rates = rates
        self.params = rates.params
        self.scale = rates.scale
        n = self.params.N - 1
        self.n = n
        if config.occupancy.size != n:
            raise DomainError("configuration size does not match N")
        if mode == "auto":
            mode = "exact" if self.params.N <= EXACT_MAX_N else "thinning"
        if mode not in ("exact", "thinning"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.mode = mode
        self._left = rates.left.tolist()
        self._right = rates.right.tolist()
        a, b = self.params.alpha, self.params.beta
        # per-site flip rate when empty / occupied
        self._rate_empty = [l * a + r * b for l, r in zip(self._left, self._right)]
        self._rate_full = [l * (1 - a) + r * (1 - b) for l, r in zip(self._left, self._right)]
        pair = np.asarray(rates.pair, dtype=float)
        self._pair = pair
        if mode == "thinning":
            weights = pair[1:n] if n >= 2 else np.zeros(0)
            self.site_proposal_rate = float(weights.sum())
            self.sampler = AliasTable(weights) if self.site_proposal_rate > 0 else None
        else:
            self._K = rates.pair_matrix()
        self.events_since_rebuild = 0
        self.reset(config)

    def reset(self, config):
        occ = config.occupancy
        self.reservoir = FenwickTree(
            [self._rate_full[i] if occ[i] else self._rate_empty[i] for i in range(self.n)]
        )
        if self.mode == "exact":
            self._refresh_discord(occ)
        self.events_since_rebuild = 0

    def _refresh_discord(self, occ):
        # O(N^2), acceptable because exact mode is limited to small N
        self._D = (self._K * (occ[:, None] != occ[None, :])).sum(axis=1)
        self.discord = FenwickTree(self._D)

    # -- totals ---------------------------------------------------------

    @property
    def reservoir_rates(self):
        return np.array(self.reservoir.values)

    @property
    def bulk_bound(self):
        """Rate at which bulk proposals are generated."""
        if self.mode == "exact":
            return 0.5 * self.discord.total
        return self.n * self.site_proposal_rate

    def bulk_total(self, config):
        """True total exchange rate (sum over discordant pairs)."""
        occ = config.occupancy
        disc = np.triu(occ[:, None] != occ[None, :], 1)
        return float((self.rates.pair_matrix() * disc).sum())

    @property
    def proposal_total(self):
        return self.bulk_bound + self.reservoir.total

    def total_rate(self, config):
        return self.bulk_total(config) + self.reservoir.total

    # -- sampling -------------------------------------------------------

    def propose(self, occ, u0, u1, u2, u3, u4):
        """Turn five uniforms into an event, or None for a thinned proposal."""
        bulk = self.bulk_bound
        v = u0 * (bulk + self.reservoir.total)
        if v < bulk:
            if self.mode == "thinning":
                n = self.n
                x = int(u1 * n)
                if x == n:
                    x -= 1
                d = 1 + self.sampler.lookup(u3, u4)
                y = x + d if u2 < 0.5 else x - d
                if y < 0 or y >= n or occ[x] == occ[y]:
                    return None
            else:
                x = self.discord.find(2.0 * v)
                w = self._K[x] * (occ != occ[x])
                cw = np.cumsum(w)
                y = int(np.searchsorted(cw, u1 * cw[-1], side="right"))
                y = min(y, self.n - 1)
                while w[y] <= 0.0 and y > 0:
                    y -= 1
            if x > y:
                x, y = y, x
            return Event("exchange", x + 1, y + 1)
        x = self.reservoir.find(v - bulk)
        return Event("flip", x + 1)

    def apply(self, event, config):
        """Apply an event to ``config`` and update the rates in place."""
        occ = config.occupancy
        res = self.reservoir
        if event.kind == "flip":
            config.flip(event.x)
            touched = (event.x - 1,)
        else:
            config.exchange(event.x, event.y)
            touched = (event.x - 1, event.y - 1)
        for i in touched:
            res.set(i, self._rate_full[i] if occ[i] else self._rate_empty[i])
        if self.mode == "exact":
            self._refresh_discord(occ)
        self.events_since_rebuild += 1
        if self.events_since_rebuild >= REBUILD_EVERY:
            res.rebuild()
            self.events_since_rebuild = 0

    # -- enumeration ------------------------------------------------------

    def events(self, config):
        """All events with positive rate, as a list of (Event, microscopic rate)."""
        occ = config.occupancy
        out = []
        for x in range(self.n):
            for y in range(x + 1, self.n):
                r = self._pair[y - x]
                if r > 0 and occ[x] != occ[y]:
                    out.append((Event("exchange", x + 1, y + 1), float(r)))
        for x in range(self.n):
            r = self.reservoir.values[x]
            if r > 0:
                out.append((Event("flip", x + 1), r))
        return out


def build_rate_table(config, params, kernel=None, mode="auto"):
    """Rate table of ``config`` under the dynamics selected by ``params.variant``."""
    return RateTable(config, ModelRates.from_params(params, kernel), mode=mode)


def variant_rates(variant, config, params, kernel=None, mode="auto"):
    """Rate table for ``variant`` with the remaining parameters of ``params``."""
    return build_rate_table(config, params.replace(variant=Variant(variant)), kernel, mode)


def step(config, table, rng):
    """Advance to the next effective event.

    Returns ``(event, waiting_time)`` with the waiting time in macroscopic
    units; thinned proposals are absorbed into the waiting time.  ``config``
    and ``table`` are updated in place.
    """
    occ = config.occupancy
    wait = 0.0
    while True:
        total = table.proposal_total
        if not total > 0.0:
            raise NumericalError("total rate vanished", {"total": total})
        u = rng.random(6)
        wait += -math.log1p(-u[5]) / (table.scale * total)
        event = table.propose(occ, u[0], u[1], u[2], u[3], u[4])
        if event is not None:
            table.apply(event, config)
            return event, wait


@dataclass
class TrajectoryRecord:
    params: ModelParams
    seed: int | None
    sample_times: np.ndarray
    snapshots: np.ndarray | None = field(repr=False, default=None)
    events: int = 0
    proposals: int = 0
    final: Configuration | None = field(repr=False, default=None)

    @property
    def profiles(self):
        return None if self.snapshots is None else self.snapshots.astype(float)


def default_sample_times(T, n=200):
    return np.array([0.0]) if T == 0 else np.linspace(0.0, T, n)


def simulate(
    params,
    g,
    T,
    rng=None,
    observers: Sequence[Observer] = (),
    sample_times=None,
    kernel=None,
    mode="auto",
    store=True,
    initial=None,
):
    """Run one trajectory on [0, T] (macroscopic time).

    Observers are called as ``observer(t, occupancy_view)`` at each sample
    time, with the state after all events at times <= t.  With ``store`` the
    occupations at the sample times are kept in ``record.snapshots``.
    """
    if T < 0:
        raise DomainError(f"horizon must be nonnegative, got {T}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    times = default_sample_times(T) if sample_times is None else np.asarray(sample_times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise DomainError("sample times must be a nonempty vector")
    if np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] > T:
        raise DomainError("sample times must be strictly increasing inside [0, T]")

    config = initial.copy() if initial is not None else sample_initial(g, params.N, rng)
    table = build_rate_table(config, params, kernel, mode)
    occ = config.occupancy
    snaps = np.empty((times.size, occ.size), dtype=np.uint8) if store else None

    def observe(k, t):
        if store:
            snaps[k] = occ
        view = config.view()
        for obs in observers:
            obs(t, view)

    scale = table.scale
    t = 0.0
    k = 0
    n_times = times.size
    while k < n_times and times[k] <= t:
        observe(k, times[k])
        k += 1
    events = proposals = 0
    block = []
    bi = 0
    log1p = math.log1p
    while k < n_times:
        if bi == len(block):
            block = rng.random((_BLOCK, 6)).tolist()
            bi = 0
        u = block[bi]
        bi += 1
        total = table.proposal_total
        if not total > 0.0:
            raise NumericalError("total rate vanished", {"time": t})
        t_next = t - log1p(-u[5]) / (scale * total)
        while k < n_times and times[k] < t_next:
            observe(k, times[k])
            k += 1
        if k == n_times:
            break
        proposals += 1
        event = table.propose(occ, u[0], u[1], u[2], u[3], u[4])
        if event is not None:
            table.apply(event, config)
            events += 1
        t = t_next
    return TrajectoryRecord(
        params=params,
        seed=int(seed) if seed is not None else None,
        sample_times=times,
        snapshots=snaps,
        events=events,
        proposals=proposals,
        final=config,
    )
