"""Exact continuous-time simulation kernels.

Exclusion models run as an event-driven CTMC: the ``2n`` directed bond
rates live in a Fenwick (binary indexed) tree, waiting times are
exponential and only the bonds touching the two exchanged sites are
refreshed after a jump.  The exponential chain runs as a piecewise
deterministic process: RK4 flow of ``d eta_x/dt = eta_x (eta_{x+1} - eta_{x-1})``
between Poisson exchange events.

Time is measured in macro units; one macro unit is ``n^a`` micro units.

Integrands that are needed over long runs (the replacement integrands of
the estimator and the squared block averages of the energy estimate) are
tracked inside the compiled loop as *channels*: the spatial sum is kept up
to date with an O(1) correction per event and its dwell-weighted time
integral is accumulated exactly.  Arbitrary Python observers are also
supported through :class:`ObserverHook`; they see the same trajectory for
the same random stream, only slower.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .errors import AbsorbingStateWarning, IntegratorAccuracyError, KindMismatchError, ParameterError
from .lattice import ENERGY, EXCLUSION, Configuration
from .models import ExpChain, ModelSpec

# channel kinds
CH_BG2, CH_BG3, CH_MSQ = 0, 1, 2

REBUILD_EVERY = 1 << 20
DEFAULT_HMAX = 1e-3
DEFAULT_DRIFT_TOL = 1e-8


@dataclass
class SimClock:
    """Elapsed macro time, time acceleration and number of jumps."""

    scale: float
    macro_time: float = 0.0
    event_count: int = 0

    @property
    def micro_time(self) -> float:
        return self.macro_time * self.scale


class ObserverHook:
    """Receives ``(config, weight)`` between events and a final ``flush()``.

    For exclusion runs ``weight`` is the exact dwell time of ``config`` in
    macro units.  For the exponential chain it is the composite Simpson
    weight of an integrator node, so that ``sum(weight * f(config))``
    approximates the time integral of ``f``.  Per run the weights add up to
    the horizon.  ``config`` aliases live kernel memory; copy it to keep it.
    """

    def observe(self, config: Configuration, dwell: float) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def flush(self) -> None:
        pass


class IntegratingObserver(ObserverHook):
    """Accumulates ``sum obs(config) * dwell``."""

    def __init__(self, obs: Callable[[Configuration], float]):
        self.obs = obs
        self.value = 0.0
        self.total_dwell = 0.0

    def observe(self, config, dwell):
        self.value += self.obs(config) * dwell
        self.total_dwell += dwell


class SnapshotObserver(ObserverHook):
    """Keeps copies of every observed state with its weight (small runs only)."""

    def __init__(self):
        self.snapshots: list[tuple[Configuration, float]] = []

    def observe(self, config, dwell):
        self.snapshots.append((config.copy(), dwell))


# ---------------------------------------------------------------------------
# Fenwick tree
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _fen_build(rates, tree):
    m = tree.shape[0] - 1
    k = rates.shape[0]
    for i in range(1, m + 1):
        tree[i] = rates[i - 1] if i <= k else 0.0
    for i in range(1, m + 1):
        j = i + (i & -i)
        if j <= m:
            tree[j] += tree[i]
    total = 0.0
    for i in range(k):
        total += rates[i]
    return total


@numba.njit(cache=True, inline="always")
def _fen_add(tree, i, delta):
    m = tree.shape[0] - 1
    i += 1
    while i <= m:
        tree[i] += delta
        i += i & -i


@numba.njit(cache=True, inline="always")
def _fen_find(tree, target):
    """Leaf whose prefix interval contains ``target``.

    The tree size ``m`` must be a power of two (padding leaves carry rate
    zero); the descent is then branch-free.
    """
    m = tree.shape[0] - 1
    pos = 0
    step = m
    while step > 0:
        v = tree[pos + step] if pos + step <= m else np.inf
        c = v <= target
        pos += step * c
        target -= v * c
        step >>= 1
    return pos  # zero-based leaf index


def _tree_size(leaves: int) -> int:
    m = 1
    while m < leaves:
        m *= 2
    return m


# ---------------------------------------------------------------------------
# exclusion kernel
# ---------------------------------------------------------------------------


@numba.njit(cache=True, inline="always")
def _wrap(x, n):
    """``x mod n`` for ``-n <= x < 2n`` without an integer division."""
    if x >= n:
        return x - n
    if x < 0:
        return x + n
    return x


@numba.njit(cache=True, inline="always")
def _fen_add_pair(tree, z, d_right, d_left):
    """Add to leaves ``2z`` and ``2z+1`` with a single upward pass.

    In one-based Fenwick indexing leaf ``2z`` is the odd node ``2z+1``,
    whose parent chain starts at ``2z+2`` -- the node of leaf ``2z+1``.
    """
    m = tree.shape[0] - 1
    tree[2 * z + 1] += d_right
    d = d_right + d_left
    i = 2 * z + 2
    while i <= m:
        tree[i] += d
        i += i & -i


@numba.njit(cache=True, inline="always")
def _set_bond(occ, rates, tree, n, z, kind, pr, pl):
    """Recompute both directed rates of bond ``(z, z+1)`` and patch the tree.

    Written branch-free: the pair update is always performed (adding zero is
    cheaper than the mispredicted test).
    """
    z = _wrap(z, n)
    w = _wrap(z + 1, n)
    a = float(occ[z])
    b = float(occ[w])
    c = 1.0
    if kind == 2:
        c = 1.0 + occ[_wrap(z - 1, n)] + occ[_wrap(z + 2, n)]
    r_right = pr * c * a * (1.0 - b)
    r_left = pl * c * b * (1.0 - a)
    d_right = r_right - rates[2 * z]
    d_left = r_left - rates[2 * z + 1]
    rates[2 * z] = r_right
    rates[2 * z + 1] = r_left
    _fen_add_pair(tree, z, d_right, d_left)


@numba.njit(cache=True)
def _init_rates(occ, rates, tree, fstate, n, kind, pr, pl):
    """Fill the rate vector and build the tree.

    ``fstate[0]`` receives a floor below which a nonzero total is impossible
    (half the smallest positive single-bond rate); totals under it are treated
    as rounding residue and trigger an exact rebuild.
    """
    for i in range(2 * n):
        rates[i] = 0.0
    for z in range(n):
        a = occ[z]
        b = occ[(z + 1) % n]
        if a != b:
            c = 1.0
            if kind == 2:
                c = 1.0 + occ[(z - 1) % n] + occ[(z + 2) % n]
            if a == 1:
                rates[2 * z] = pr * c
            else:
                rates[2 * z + 1] = pl * c
    lo = np.inf
    if pr > 0.0:
        lo = pr
    if 0.0 < pl < lo:
        lo = pl
    fstate[0] = 0.5 * lo
    _fen_build(rates, tree)


# Channels are tracked in groups: channels sharing kind, block length and
# constant have identical local values and differ only in their weights, so
# the local values are computed once per group and dotted with every member's
# weight row.  gmeta[g] = (kind, ell, first member, end member) indexes into
# ``members`` (channel indices); S[g] holds the group's right-block sums.


@numba.njit(cache=True, inline="always")
def _local_value(occ, S, g, k, ell, rho, c, n, x):
    A = S[g, x] / ell - rho
    if k == 0:
        return (occ[x] - rho) * (occ[_wrap(x + 1, n)] - rho) - A * A + c
    if k == 1:
        return (occ[_wrap(x - 1, n)] - rho) * (occ[x] - rho) * (occ[_wrap(x + 1, n)] - rho) - A * A * A + c
    return A * A


@numba.njit(cache=True)
def _group_full(occ, S, g, gmeta, members, w, rho, gconst, cur, n):
    k = gmeta[g, 0]
    ell = gmeta[g, 1]
    s = 0
    for y in range(1, ell + 1):
        s += occ[y % n]
    for x in range(n):
        S[g, x] = s
        s += occ[(x + ell + 1) % n] - occ[(x + 1) % n]
    for i in range(gmeta[g, 2], gmeta[g, 3]):
        cur[members[i]] = 0.0
    for x in range(n):
        v = _local_value(occ, S, g, k, float(ell), rho, gconst[g], n, x)
        for i in range(gmeta[g, 2], gmeta[g, 3]):
            j = members[i]
            cur[j] += w[j, x] * v


@numba.njit(cache=True)
def _init_channels(occ, S, gmeta, members, w, rho, gconst, cur, n):
    for g in range(gmeta.shape[0]):
        _group_full(occ, S, g, gmeta, members, w, rho, gconst, cur, n)


@numba.njit(cache=True, inline="always")
def _draw(fstate, rates, tree, scale, remaining, freeze, rng):
    """Next dwell (macro units) and the leaf that fires; leaf < 0 ends the run.

    leaf == -1: horizon reached; leaf == -2: absorbing state (all rates zero).
    The total rate is the tree root (the tree size is a power of two).
    """
    if freeze:
        return remaining, -1
    m_tree = tree.shape[0] - 1
    total = tree[m_tree]
    if total < fstate[0]:
        _fen_build(rates, tree)
        total = tree[m_tree]
        if total <= 0.0:
            return remaining, -2
    u = rng.random()
    dt = -math.log1p(-u) / (total * scale)
    if dt >= remaining:
        return remaining, -1
    target = rng.random() * total
    leaf = _fen_find(tree, target)
    m = rates.shape[0]
    if leaf >= m or rates[leaf] <= 0.0:
        leaf = _reselect(rates, tree, target)
    return dt, leaf


@numba.njit(cache=True)
def _reselect(rates, tree, target):
    # accumulated rounding put the target on a zero-rate leaf; rebuild exactly
    # and search again, nudging to the nearest live leaf if still needed
    _fen_build(rates, tree)
    m = rates.shape[0]
    t2 = min(target, tree[tree.shape[0] - 1] * (1.0 - 1e-15))
    leaf = _fen_find(tree, t2)
    while leaf < m and rates[leaf] <= 0.0:
        leaf += 1
    if leaf >= m:
        leaf = m - 1
        while rates[leaf] <= 0.0:
            leaf -= 1
    return leaf


@numba.njit(cache=True)
def _refresh(occ, rates, tree, istate, S, gmeta, members, w, rho, gconst, cur, n):
    # periodic exact recomputation to stop floating-point drift
    istate[1] = 0
    _fen_build(rates, tree)
    _init_channels(occ, S, gmeta, members, w, rho, gconst, cur, n)


@numba.njit(cache=True)
def _swap_tracked(z, zp, occ, n, S, gmeta, members, w, rho, cur):
    """Swap sites ``z`` and ``zp = z+1`` while patching every channel value.

    The increments are written in closed form.  Exchanging the two values
    leaves every product that contains both sites unchanged, so a bg2 channel
    changes only through the pairs at ``z-1`` and ``z+1``, a bg3 channel
    through the triples centred at ``z-1`` and ``z+2``, and every channel
    through the two block sums starting at ``z-ell`` and ``z``.  Requires
    ``n >= 6`` so that the neighbours involved are distinct from the pair.
    """
    a = occ[z]
    b = occ[zp]
    d = float(b) - float(a)  # change of the value at z; zp changes by -d
    occ[z] = b
    occ[zp] = a
    for g in range(gmeta.shape[0]):
        k = gmeta[g, 0]
        ell = gmeta[g, 1]
        fl = float(ell)
        xl = _wrap(z - ell, n)
        al0 = S[g, xl] / fl - rho
        az0 = S[g, z] / fl - rho
        S[g, xl] += b - a
        S[g, z] += a - b
        al1 = S[g, xl] / fl - rho
        az1 = S[g, z] / fl - rho
        if k == 0:
            p1 = _wrap(z - 1, n)
            p2 = zp
            c1 = (occ[p1] - rho) * d
            c2 = -d * (occ[_wrap(z + 2, n)] - rho)
            c3 = al0 * al0 - al1 * al1
            c4 = az0 * az0 - az1 * az1
        elif k == 1:
            p1 = _wrap(z - 1, n)
            p2 = _wrap(z + 2, n)
            c1 = (occ[_wrap(z - 2, n)] - rho) * (occ[p1] - rho) * d
            c2 = -d * (occ[p2] - rho) * (occ[_wrap(z + 3, n)] - rho)
            c3 = al0 * al0 * al0 - al1 * al1 * al1
            c4 = az0 * az0 * az0 - az1 * az1 * az1
        else:
            p1 = z
            p2 = z
            c1 = 0.0
            c2 = 0.0
            c3 = al1 * al1 - al0 * al0
            c4 = az1 * az1 - az0 * az0
        for i in range(gmeta[g, 2], gmeta[g, 3]):
            j = members[i]
            cur[j] += w[j, p1] * c1 + w[j, p2] * c2 + w[j, xl] * c3 + w[j, z] * c4


@numba.njit(cache=True, inline="always")
def _bonds_after_swap(occ, rates, tree, istate, n, z, kind, pr, pl):
    # literal kind arguments let the compiler specialise each bond update
    if kind == 2:
        for y in range(z - 2, z + 3):
            _set_bond(occ, rates, tree, n, y, 2, pr, pl)
    else:
        _set_bond(occ, rates, tree, n, z - 1, 0, pr, pl)
        _set_bond(occ, rates, tree, n, z, 0, pr, pl)
        _set_bond(occ, rates, tree, n, z + 1, 0, pr, pl)
    istate[0] += 1
    istate[1] += 1


@numba.njit(cache=True, inline="always")
def _apply(leaf, occ, rates, tree, istate, n, kind, pr, pl,
           S, gmeta, members, w, rho, gconst, cur):
    z = leaf // 2
    zp = _wrap(z + 1, n)
    if gmeta.shape[0] > 0:
        _swap_tracked(z, zp, occ, n, S, gmeta, members, w, rho, cur)
    else:
        a = occ[z]
        occ[z] = occ[zp]
        occ[zp] = a
    _bonds_after_swap(occ, rates, tree, istate, n, z, kind, pr, pl)
    if istate[1] >= REBUILD_EVERY:
        _refresh(occ, rates, tree, istate, S, gmeta, members, w, rho, gconst, cur, n)


@numba.njit(cache=True)
def _run_plain(horizon, occ, rates, tree, fstate, istate, n, kind, pr, pl, scale, freeze, rng):
    """Channel-free event loop (same random stream and rebuild schedule as
    :func:`_run`, so trajectories agree)."""
    t = 0.0
    while True:
        dt, leaf = _draw(fstate, rates, tree, scale, horizon - t, freeze, rng)
        t += dt
        if leaf < 0:
            return 1 if leaf == -2 else 0
        z = leaf // 2
        zp = _wrap(z + 1, n)
        a = occ[z]
        occ[z] = occ[zp]
        occ[zp] = a
        _bonds_after_swap(occ, rates, tree, istate, n, z, kind, pr, pl)
        if istate[1] >= REBUILD_EVERY:
            istate[1] = 0
            _fen_build(rates, tree)


@numba.njit(cache=True)
def _run(horizon, occ, rates, tree, fstate, istate, n, kind, pr, pl, scale, freeze, rng,
         S, gmeta, members, w, rho, gconst, cur, acc):
    t = 0.0
    while True:
        dt, leaf = _draw(fstate, rates, tree, scale, horizon - t, freeze, rng)
        for j in range(cur.shape[0]):
            acc[j] += cur[j] * dt
        t += dt
        if leaf < 0:
            return 1 if leaf == -2 else 0
        _apply(leaf, occ, rates, tree, istate, n, kind, pr, pl,
               S, gmeta, members, w, rho, gconst, cur)


@dataclass(frozen=True)
class Channel:
    """A tracked spatial sum ``sum_x weights[x] * local_x(config)``.

    ``kind`` is ``"bg2"``, ``"bg3"`` (replacement integrands with block
    length ``ell`` and additive constant ``const`` per site) or ``"msq"``
    (squared right-block average of length ``ell``).
    """

    kind: str
    ell: int
    weights: np.ndarray
    const: float = 0.0


_CH_CODES = {"bg2": CH_BG2, "bg3": CH_BG3, "msq": CH_MSQ}


class ExclusionKernel:
    """Resumable event-driven simulation of an exclusion model.

    The kernel owns a private copy of the configuration.  Successive
    :meth:`advance` calls continue the same Markov trajectory (the chain is
    memoryless, so splitting a run into segments does not change its law).
    """

    def __init__(self, model: ModelSpec, config: Configuration, rng: np.random.Generator,
                 channels: Sequence[Channel] = (), freeze: bool = False):
        if not model.is_exclusion:
            raise KindMismatchError("ExclusionKernel needs an exclusion model")
        if config.kind != EXCLUSION or config.n != model.n:
            raise KindMismatchError("configuration does not match the model")
        self.model = model
        self.rng = rng
        self.freeze = bool(freeze)
        n = model.n
        self.n = n
        self.kind = model.kind_code
        self.pr, self.pl = model.base_rates
        self.occ = config.values.copy()
        self.rates = np.zeros(2 * n)
        self.tree = np.zeros(_tree_size(2 * n) + 1)
        self.fstate = np.zeros(1)
        self.istate = np.zeros(2, dtype=np.int64)
        _init_rates(self.occ, self.rates, self.tree, self.fstate, n, self.kind, self.pr, self.pl)
        self.clock = SimClock(scale=model.scale)
        self.absorbed = False
        self._set_channels(channels)
        self._view = None

    def _set_channels(self, channels):
        n = self.n
        k = len(channels)
        if k and n < 6:
            raise ParameterError("tracked channels need at least 6 sites")
        for ch in channels:
            if ch.kind not in _CH_CODES:
                raise ParameterError(f"unknown channel kind {ch.kind!r}")
            if not 1 <= ch.ell <= n // 2:
                raise ParameterError(f"channel block length {ch.ell} outside [1, n/2]")
        self.channels = tuple(channels)
        groups: dict = {}
        for j, c in enumerate(channels):
            groups.setdefault((_CH_CODES[c.kind], int(c.ell), float(c.const)), []).append(j)
        ng = len(groups)
        self.gmeta = np.zeros((ng, 4), dtype=np.int64)
        self.gconst = np.zeros(ng)
        self.members = np.zeros(k, dtype=np.int64)
        pos = 0
        for g, ((code, ell, const), js) in enumerate(groups.items()):
            self.gmeta[g] = (code, ell, pos, pos + len(js))
            self.gconst[g] = const
            self.members[pos:pos + len(js)] = js
            pos += len(js)
        self.w = np.zeros((k, n))
        for j, c in enumerate(channels):
            self.w[j] = np.broadcast_to(np.asarray(c.weights, dtype=np.float64), (n,))
        self.S = np.zeros((ng, n), dtype=np.int64)
        self.cur = np.zeros(k)
        self.acc = np.zeros(k)
        _init_channels(self.occ, self.S, self.gmeta, self.members, self.w, self.model.rho,
                       self.gconst, self.cur, n)

    @property
    def config(self) -> Configuration:
        """Copy of the current configuration."""
        return Configuration(EXCLUSION, self.occ.copy())

    @property
    def integrals(self) -> np.ndarray:
        """Time integrals of the channels accumulated so far."""
        return self.acc.copy()

    @property
    def channel_values(self) -> np.ndarray:
        return self.cur.copy()

    def _live_view(self) -> Configuration:
        if self._view is None:
            arr = self.occ.view()
            arr.flags.writeable = False
            self._view = Configuration(EXCLUSION, arr)
        return self._view

    def advance(self, duration: float, observers: Iterable[ObserverHook] = ()) -> None:
        """Run for ``duration`` macro time units."""
        if not duration > 0:
            raise ParameterError(f"horizon must be positive, got {duration}")
        observers = list(observers)
        before = int(self.istate[0])
        args = (self.S, self.gmeta, self.members, self.w, self.model.rho, self.gconst,
                self.cur)
        if not observers and self.gmeta.shape[0] == 0:
            status = _run_plain(duration, self.occ, self.rates, self.tree, self.fstate,
                                self.istate, self.n, self.kind, self.pr, self.pl,
                                self.clock.scale, self.freeze, self.rng)
        elif not observers:
            status = _run(duration, self.occ, self.rates, self.tree, self.fstate, self.istate,
                          self.n, self.kind, self.pr, self.pl, self.clock.scale, self.freeze,
                          self.rng, *args, self.acc)
        else:
            status = self._advance_observed(duration, observers, args)
        self.clock.macro_time += duration
        self.clock.event_count += int(self.istate[0]) - before
        if status == 1:
            self.absorbed = True
            warnings.warn("all jump rates are zero; finishing the run with one dwell",
                          AbsorbingStateWarning, stacklevel=2)

    def _advance_observed(self, duration, observers, args):
        view = self._live_view()
        t = 0.0
        status = 0
        while True:
            dt, leaf = _draw(self.fstate, self.rates, self.tree, self.clock.scale,
                             duration - t, self.freeze, self.rng)
            self.acc += self.cur * dt
            for ob in observers:
                ob.observe(view, dt)
            t += dt
            if leaf < 0:
                status = 1 if leaf == -2 else 0
                break
            _apply(leaf, self.occ, self.rates, self.tree, self.istate, self.n,
                   self.kind, self.pr, self.pl, *args)
        for ob in observers:
            ob.flush()
        return status


def simulate_exclusion(model: ModelSpec, config: Configuration, horizon: float,
                       rng: np.random.Generator, observers: Iterable[ObserverHook] = (),
                       clock: SimClock | None = None, freeze: bool = False) -> Configuration:
    """Exact CTMC run of ``n^a L_n`` up to macro time ``horizon``; returns the final state."""
    kern = ExclusionKernel(model, config, rng, freeze=freeze)
    kern.advance(horizon, observers)
    if clock is not None:
        clock.scale = kern.clock.scale
        clock.macro_time += kern.clock.macro_time
        clock.event_count += kern.clock.event_count
    return kern.config


# ---------------------------------------------------------------------------
# exponential chain (PDMP)
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _vf(eta, out):
    n = eta.shape[0]
    for x in range(n):
        out[x] = eta[x] * (eta[_wrap(x + 1, n)] - eta[_wrap(x - 1, n)])


@numba.njit(cache=True)
def _rk4_step(eta, h, k1, k2, k3, k4, tmp):
    n = eta.shape[0]
    _vf(eta, k1)
    for i in range(n):
        tmp[i] = eta[i] + 0.5 * h * k1[i]
    _vf(tmp, k2)
    for i in range(n):
        tmp[i] = eta[i] + 0.5 * h * k2[i]
    _vf(tmp, k3)
    for i in range(n):
        tmp[i] = eta[i] + h * k3[i]
    _vf(tmp, k4)
    for i in range(n):
        eta[i] += h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0


@numba.njit(cache=True)
def _rk4_flow(eta, T, nsteps):
    n = eta.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    h = T / nsteps
    for _ in range(nsteps):
        _rk4_step(eta, h, k1, k2, k3, k4, tmp)


@numba.njit(cache=True)
def _draw_exchange(total_rate, scale, remaining, rng):
    u = rng.random()
    dt = -math.log1p(-u) / (total_rate * scale)
    if dt >= remaining:
        return remaining, False
    return dt, True


@numba.njit(cache=True)
def _pdmp_check(eta, mass0, tol, micro_elapsed):
    s = 0.0
    for i in range(eta.shape[0]):
        if not eta[i] > 0.0:
            return 2
        s += eta[i]
    if abs(s - mass0) > tol * max(1.0, micro_elapsed) * abs(mass0):
        return 1
    return 0


@numba.njit(cache=True)
def _pdmp_run(eta, gamma_noise, scale, horizon, hmax, drift, tol, rng, istate):
    n = eta.shape[0]
    mass0 = 0.0
    for i in range(n):
        mass0 += eta[i]
    t = 0.0
    rate = gamma_noise * n
    while True:
        dt, fire = _draw_exchange(rate, scale, horizon - t, rng)
        if drift:
            T = dt * scale
            steps = 2 * max(1, int(math.ceil(T / (2.0 * hmax))))
            _rk4_flow(eta, T, steps)
            code = _pdmp_check(eta, mass0, tol, (t + dt) * scale)
            if code != 0:
                return code
        t += dt
        if not fire:
            return 0
        z = min(int(rng.random() * n), n - 1)
        zp = _wrap(z + 1, n)
        tmpv = eta[z]
        eta[z] = eta[zp]
        eta[zp] = tmpv
        istate[0] += 1


def _simpson_weights(m2: int, h: float) -> np.ndarray:
    wts = np.full(m2 + 1, 2.0)
    wts[1::2] = 4.0
    wts[0] = wts[-1] = 1.0
    return wts * (h / 3.0)


def simulate_pdmp(model: ModelSpec, config: Configuration, horizon: float,
                  rng: np.random.Generator, observers: Iterable[ObserverHook] = (),
                  h_max: float = DEFAULT_HMAX, drift: bool = True,
                  drift_tol: float = DEFAULT_DRIFT_TOL, clock: SimClock | None = None) -> Configuration:
    """Run the exponential chain for ``horizon`` macro units.

    Between exchange events (each bond rings at micro rate ``gamma_noise``)
    the drift ODE is integrated with RK4 steps of micro size at most
    ``h_max``; observers receive every integrator node with its composite
    Simpson weight.  ``drift=False`` switches the flow off.
    """
    if not isinstance(model.variant, ExpChain):
        raise KindMismatchError("simulate_pdmp needs an ExpChain model")
    if config.kind != ENERGY or config.n != model.n:
        raise KindMismatchError("simulate_pdmp needs an energy configuration of size n")
    if not horizon > 0:
        raise ParameterError(f"horizon must be positive, got {horizon}")
    if not h_max > 0:
        raise ParameterError("h_max must be positive")
    eta = config.values.copy()
    scale = model.scale
    istate = np.zeros(1, dtype=np.int64)
    observers = list(observers)
    gamma_noise = model.variant.gamma_noise
    if not observers:
        code = _pdmp_run(eta, gamma_noise, scale, horizon, h_max, drift, drift_tol, rng, istate)
    else:
        code = _pdmp_observed(eta, gamma_noise, scale, horizon, h_max, drift, drift_tol, rng,
                              istate, observers)
    if code != 0:
        what = "non-positive energy" if code == 2 else "mass drift beyond tolerance"
        raise IntegratorAccuracyError(f"PDMP integrator failed ({what}); try a smaller h_max")
    if clock is not None:
        clock.scale = scale
        clock.macro_time += horizon
        clock.event_count += int(istate[0])
    return Configuration(ENERGY, eta)


def _pdmp_observed(eta, gamma_noise, scale, horizon, hmax, drift, tol, rng, istate, observers):
    n = eta.shape[0]
    mass0 = float(eta.sum())
    bufs = [np.empty(n) for _ in range(5)]
    view_arr = eta.view()
    view_arr.flags.writeable = False
    view = Configuration(ENERGY, view_arr)
    t = 0.0
    rate = gamma_noise * n
    code = 0
    while True:
        dt, fire = _draw_exchange(rate, scale, horizon - t, rng)
        if drift:
            T = dt * scale
            steps = 2 * max(1, int(math.ceil(T / (2.0 * hmax))))
            wts = _simpson_weights(steps, T / steps) / scale
            for ob in observers:
                ob.observe(view, wts[0])
            for k in range(1, steps + 1):
                _rk4_step(eta, T / steps, *bufs)
                for ob in observers:
                    ob.observe(view, wts[k])
            code = _pdmp_check(eta, mass0, tol, (t + dt) * scale)
            if code != 0:
                break
        else:
            for ob in observers:
                ob.observe(view, dt)
        t += dt
        if not fire:
            break
        z = min(int(rng.random() * n), n - 1)
        zp = (z + 1) % n
        eta[z], eta[zp] = eta[zp], eta[z]
        istate[0] += 1
    for ob in observers:
        ob.flush()
    return code


def pdmp_flow(config: Configuration, micro_time: float, h_max: float = DEFAULT_HMAX) -> Configuration:
    """Deterministic drift flow alone over ``micro_time`` (no exchanges)."""
    eta = config.values.copy()
    steps = max(1, int(math.ceil(micro_time / h_max)))
    _rk4_flow(eta, micro_time, steps)
    return Configuration(ENERGY, eta)


def integrate_observable(obs: Callable[[Configuration], float], model: ModelSpec,
                         config: Configuration, horizon: float, rng: np.random.Generator,
                         **kwargs) -> float:
    """Time integral of ``obs`` along one trajectory started from ``config``.

    Exact dwell-weighted sum for exclusion models, composite Simpson over
    the integrator nodes for the exponential chain.
    """
    ob = IntegratingObserver(obs)
    if model.is_exclusion:
        simulate_exclusion(model, config, horizon, rng, observers=[ob], **kwargs)
    else:
        simulate_pdmp(model, config, horizon, rng, observers=[ob], **kwargs)
    return ob.value
