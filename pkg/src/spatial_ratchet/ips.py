"""Event-driven stochastic simulation of the lattice particle system.

Exact Gillespie dynamics on a finite window of demes: per-deme event rates
are kept in a binary-indexed tree so each event costs O(log #demes), and
the inner loop is compiled with numba.  All randomness comes from an
explicit splitmix64 stream, so trajectories are bit-reproducible from the
seed across runs and platforms.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import EmptySystem, WindowTooSmall
from .model import ModelParams
from .pde import DensityField, Grid1D
from .profiles import InitialProfile

BOUNDARY_MARGIN = 5
_REBUILD_PERIOD = 1 << 20

STATUS_REACHED = 0
STATUS_EMPTY = 1
STATUS_EVENT_CAP = 2
STATUS_GUARD = 3

KIND_MIGRATION = 0
KIND_BIRTH = 1
KIND_DEATH = 2
_KIND_NAMES = {KIND_MIGRATION: "migration", KIND_BIRTH: "birth", KIND_DEATH: "death"}


@dataclass(frozen=True)
class LatticeWindow:
    """Demes indexed -W..W at spacing 1/L_N, classes capped at K."""

    W: int
    K: int

    def __post_init__(self):
        if self.W < 1:
            raise ValueError("window half-width must be >= 1")
        if self.K < 0:
            raise ValueError("class cap must be >= 0")

    @property
    def n_demes(self) -> int:
        return 2 * self.W + 1


@dataclass
class SimClock:
    t: float = 0.0
    seed: int = 0
    events: int = 0
    rng_state: np.ndarray = field(
        default_factory=lambda: np.zeros(1, dtype=np.uint64)
    )

    @classmethod
    def from_seed(cls, seed: int) -> "SimClock":
        clock = cls(seed=seed)
        clock.rng_state[0] = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        return clock


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    deme: int          # lattice index in -W..W
    k: int             # class of the acting particle
    aux: int           # destination deme (migration) or child class (birth)


# ---------------------------------------------------------------------------
# numba kernel


@njit(inline="always")
def _rand_u64(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _rand_unit(state):
    # uniform on [0, 1)
    return (_rand_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def _polyval(coeffs, x):
    acc = coeffs[len(coeffs) - 1]
    for i in range(len(coeffs) - 2, -1, -1):
        acc = acc * x + coeffs[i]
    return acc


@njit(inline="always")
def _fenwick_update(tree, pos, delta):
    i = pos + 1
    while i < len(tree):
        tree[i] += delta
        i += i & (-i)


@njit(inline="always")
def _fenwick_total(tree, D):
    total = 0.0
    i = D
    while i > 0:
        total += tree[i]
        i -= i & (-i)
    return total


@njit(inline="always")
def _fenwick_find(tree, mask, D, value):
    """Largest deme index with prefix sum <= value; returns (index,
    residual rate within that deme)."""
    idx = 0
    rem = value
    bit = mask
    while bit > 0:
        nxt = idx + bit
        if nxt <= D and tree[nxt] < rem:
            idx = nxt
            rem -= tree[nxt]
        bit >>= 1
    return idx, rem


@njit(inline="always")
def _deme_rate(nj, wj, mN, invN, qp, qm):
    if nj == 0:
        return 0.0
    dens = nj * invN
    return mN * nj + _polyval(qp, dens) * wj + _polyval(qm, dens) * nj


@njit(cache=True, nogil=True)
def _rebuild(counts, n, w, r, tree, s, mN, invN, qp, qm):
    D = counts.shape[1]
    Kp1 = counts.shape[0] - 1
    for j in range(D):
        tot = 0
        ws = 0.0
        for k in range(Kp1 + 1):
            tot += counts[k, j]
            if k < Kp1:
                ws += s[k] * counts[k, j]
        n[j] = tot
        w[j] = ws
        r[j] = _deme_rate(tot, ws, mN, invN, qp, qm)
    for i in range(len(tree)):
        tree[i] = 0.0
    for j in range(D):
        _fenwick_update(tree, j, r[j])


@njit(cache=True, nogil=True)
def _advance(counts, n, w, r, tree, rng, t_start, t_target, max_events,
             s, mN, invN, mu, qp, qm, guard):
    """Run events until t_target, the event cap, extinction, or a guard
    trip.  Returns (t, events, status, kind, deme, class, aux) with the
    descriptors of the final executed event."""
    D = counts.shape[1]
    K = counts.shape[0] - 2
    mask = 1
    while mask * 2 <= D:
        mask *= 2

    t = t_start
    done = 0
    ev_kind = -1
    ev_deme = -1
    ev_k = -1
    ev_aux = -1
    _rebuild(counts, n, w, r, tree, s, mN, invN, qp, qm)

    while done < max_events:
        R = _fenwick_total(tree, D)
        if R <= 0.0:
            return t, done, STATUS_EMPTY, ev_kind, ev_deme, ev_k, ev_aux
        u = _rand_unit(rng)
        dt = -math.log(1.0 - u) / R
        if t + dt > t_target:
            return t_target, done, STATUS_REACHED, ev_kind, ev_deme, ev_k, ev_aux
        t += dt

        j, rem = _fenwick_find(tree, mask, D, _rand_unit(rng) * R)
        if j >= D or n[j] == 0:
            # float residue pointed at an empty deme; resync its rate
            if j < D:
                _fenwick_update(tree, j, -tree_leaf(tree, j))
                r[j] = 0.0
            continue
        dens = n[j] * invN
        mig = mN * n[j]
        birth = _polyval(qp, dens) * w[j]

        touched_other = -1
        if rem < mig:
            # migration: class by occupancy, direction uniform; attempts to
            # leave the window are censored (zero-flux walls), so the
            # per-deme rate formula m_N * n stays exact as a null event
            target = _rand_unit(rng) * n[j]
            k = _pick_by_counts(counts, j, K + 1, target)
            dest = j + 1 if _rand_unit(rng) < 0.5 else j - 1
            if dest < 0 or dest >= D:
                dest = j
            if dest != j:
                counts[k, j] -= 1
                counts[k, dest] += 1
                n[j] -= 1
                n[dest] += 1
                if k <= K:
                    w[j] -= s[k]
                    w[dest] += s[k]
                touched_other = dest
            ev_kind = KIND_MIGRATION
            ev_deme = j
            ev_k = k
            ev_aux = dest
        elif rem < mig + birth:
            # birth: parent weighted by fitness, child mutates w.p. mu
            target = _rand_unit(rng) * w[j]
            k = _pick_by_weights(counts, s, j, K, target)
            child = k
            if _rand_unit(rng) < mu:
                child = k + 1  # class K feeds the overflow class K+1
            counts[child, j] += 1
            n[j] += 1
            if child <= K:
                w[j] += s[child]
            ev_kind = KIND_BIRTH
            ev_deme = j
            ev_k = k
            ev_aux = child
        else:
            # death: uniform over particles, overflow included
            target = _rand_unit(rng) * n[j]
            k = _pick_by_counts(counts, j, K + 1, target)
            counts[k, j] -= 1
            n[j] -= 1
            if k <= K:
                w[j] -= s[k]
            ev_kind = KIND_DEATH
            ev_deme = j
            ev_k = k
            ev_aux = -1

        new_r = _deme_rate(n[j], w[j], mN, invN, qp, qm)
        _fenwick_update(tree, j, new_r - r[j])
        r[j] = new_r
        if touched_other >= 0:
            new_r = _deme_rate(n[touched_other], w[touched_other], mN, invN, qp, qm)
            _fenwick_update(tree, touched_other, new_r - r[touched_other])
            r[touched_other] = new_r

        if guard > 0:
            edge = j if touched_other < 0 else max(j, touched_other)
            low = j if touched_other < 0 else min(j, touched_other)
            if (edge >= D - guard and n[edge] > 0) or (low < guard and n[low] > 0):
                return t, done + 1, STATUS_GUARD, ev_kind, ev_deme, ev_k, ev_aux

        done += 1
        if done % _REBUILD_PERIOD == 0:
            _rebuild(counts, n, w, r, tree, s, mN, invN, qp, qm)

    return t, done, STATUS_EVENT_CAP, ev_kind, ev_deme, ev_k, ev_aux


@njit(inline="always")
def tree_leaf(tree, pos):
    """Current leaf value at deme pos (prefix(pos+1) - prefix(pos))."""
    hi = 0.0
    i = pos + 1
    while i > 0:
        hi += tree[i]
        i -= i & (-i)
    lo = 0.0
    i = pos
    while i > 0:
        lo += tree[i]
        i -= i & (-i)
    return hi - lo


@njit(inline="always")
def _pick_by_counts(counts, j, k_max, target):
    acc = 0.0
    last = 0
    for k in range(k_max + 1):
        ck = counts[k, j]
        if ck > 0:
            last = k
            acc += ck
            if target < acc:
                return k
    return last


@njit(inline="always")
def _pick_by_weights(counts, s, j, K, target):
    acc = 0.0
    last = 0
    for k in range(K + 1):
        wk = s[k] * counts[k, j]
        if wk > 0.0:
            last = k
            acc += wk
            if target < acc:
                return k
    return last


# ---------------------------------------------------------------------------
# python surface


class ParticleState:
    """Occupancy counts per class and deme with cached rate aggregates.

    Caches: per-deme totals n, fitness-weighted sums w over reproducing
    classes, event rates r, and the Fenwick tree holding r.  The kernel
    rebuilds them from counts on entry and periodically thereafter, so
    drift never exceeds float rounding on one sweep.
    """

    def __init__(self, counts: np.ndarray, window: LatticeWindow,
                 params: ModelParams, boundary_guard: bool):
        counts = np.ascontiguousarray(counts, dtype=np.int64)
        if counts.shape != (window.K + 2, window.n_demes):
            raise ValueError("counts shape must be (K+2, 2W+1)")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        self.counts = counts
        self.window = window
        self.params = params
        self.boundary_guard = boundary_guard
        D = window.n_demes
        self.n = np.zeros(D, dtype=np.int64)
        self.w = np.zeros(D, dtype=float)
        self.r = np.zeros(D, dtype=float)
        self.tree = np.zeros(D + 1, dtype=float)
        self._s = params.fitness.values(window.K)
        self._qp = np.array(params.rates.q_plus, dtype=float)
        self._qm = np.array(params.rates.q_minus, dtype=float)
        self.recompute_caches()

    def recompute_caches(self):
        _rebuild(self.counts, self.n, self.w, self.r, self.tree, self._s,
                 self.params.m_N, 1.0 / self.params.scaling.N, self._qp, self._qm)

    @property
    def total_rate(self) -> float:
        return float(_fenwick_total(self.tree, self.window.n_demes))

    @property
    def total_particles(self) -> int:
        return int(self.counts.sum())

    def deme_positions(self) -> np.ndarray:
        L_N = self.params.scaling.L_N
        W = self.window.W
        return np.arange(-W, W + 1) / L_N

    def grid(self) -> Grid1D:
        L_N = self.params.scaling.L_N
        W = self.window.W
        return Grid1D(-W / L_N, W / L_N, self.window.n_demes)

    def density(self, time: float = 0.0) -> DensityField:
        return DensityField(self.counts / self.params.scaling.N, self.grid(), time)

    def check_consistency(self, rel_tol: float = 1e-9) -> bool:
        """Full recomputation of every cache must match the running values."""
        n_ref = self.counts.sum(axis=0)
        if not np.array_equal(n_ref, self.n):
            return False
        w_ref = (self._s[:, None] * self.counts[: self.window.K + 1]).sum(axis=0)
        if not np.allclose(w_ref, self.w, rtol=rel_tol, atol=1e-12):
            return False
        dens = self.n / self.params.scaling.N
        r_ref = np.where(
            self.n > 0,
            self.params.m_N * self.n
            + self.params.rates.eval_plus(dens) * self.w
            + self.params.rates.eval_minus(dens) * self.n,
            0.0,
        )
        if not np.allclose(r_ref, self.r, rtol=rel_tol, atol=1e-12):
            return False
        total = float(np.sum(self.r))
        return math.isclose(total, self.total_rate, rel_tol=rel_tol, abs_tol=1e-12)


def init_from_profile(
    profile: InitialProfile,
    params: ModelParams,
    window: LatticeWindow,
    sup_bound: float = 10.0,
) -> ParticleState:
    """Discretise a profile into per-deme occupancies: class-k count at
    deme x is floor(L_N * N * integral of f_k over the deme's cell), with
    classes above the cap pooled into the overflow class before flooring.
    """
    profile.check_bounded(sup_bound)
    L_N = params.scaling.L_N
    N = params.scaling.N
    centers = np.arange(-window.W, window.W + 1) / L_N
    counts = profile.cell_counts(centers, 1.0 / L_N, window.K, float(L_N) * N)
    occupied = np.flatnonzero(counts.sum(axis=0) > 0)
    guard = bool(
        occupied.size > 0
        and occupied.min() >= BOUNDARY_MARGIN
        and occupied.max() < window.n_demes - BOUNDARY_MARGIN
    )
    return ParticleState(counts, window, params, boundary_guard=guard)


def _run(state: ParticleState, clock: SimClock, t_target: float, max_events: int):
    guard = BOUNDARY_MARGIN if state.boundary_guard else 0
    t, done, status, kind, deme, k, aux = _advance(
        state.counts, state.n, state.w, state.r, state.tree, clock.rng_state,
        clock.t, t_target, max_events, state._s, state.params.m_N,
        1.0 / state.params.scaling.N, state.params.mu, state._qp, state._qm,
        guard,
    )
    clock.t = float(t)
    clock.events += int(done)
    if status == STATUS_GUARD:
        raise WindowTooSmall(
            f"particles entered the {BOUNDARY_MARGIN}-deme boundary margin at "
            f"t={clock.t:g}; enlarge the window half-width"
        )
    return status, kind, deme, k, aux


def step(state: ParticleState, clock: SimClock, params: ModelParams) -> EventRecord:
    """Execute exactly one event and return its record.

    Raises EmptySystem when the total rate is zero (absorbing state).
    """
    if params is not state.params and params != state.params:
        raise ValueError("step must use the params the state was built with")
    status, kind, deme, k, aux = _run(state, clock, math.inf, 1)
    if status == STATUS_EMPTY:
        raise EmptySystem("no events possible: total rate is zero")
    W = state.window.W
    return EventRecord(
        time=clock.t,
        kind=_KIND_NAMES[kind],
        deme=deme - W,
        k=k,
        aux=(aux - W) if kind == KIND_MIGRATION else aux,
    )


def simulate(
    params: ModelParams,
    profile: InitialProfile,
    window: LatticeWindow,
    T: float,
    output_times,
    seed: int,
    sup_bound: float = 10.0,
) -> list[tuple[float, DensityField]]:
    """Run one trajectory, snapshotting counts/N at each output time.

    Snapshots hold the state at the last event at or before the requested
    time.  Extinction freezes the (zero) state for the remaining times.
    """
    output_times = sorted(float(t) for t in output_times)
    if output_times and (output_times[0] < 0.0 or output_times[-1] > T + 1e-12):
        raise ValueError("output times must lie in [0, T]")
    state = init_from_profile(profile, params, window, sup_bound=sup_bound)
    clock = SimClock.from_seed(seed)
    out: list[tuple[float, DensityField]] = []
    for t_out in output_times:
        if clock.t < t_out:
            status = STATUS_EVENT_CAP
            while status == STATUS_EVENT_CAP:
                status, *_ = _run(state, clock, t_out, 1 << 30)
            if status == STATUS_EMPTY:
                clock.t = t_out
        out.append((t_out, state.density(time=t_out)))
    return out


def replicate_mean_density(
    params: ModelParams,
    profile: InitialProfile,
    window: LatticeWindow,
    T: float,
    n_reps: int,
    base_seed: int,
) -> DensityField:
    """Average the time-T density over independent replicates seeded
    base_seed..base_seed+n_reps-1.  Replicates run on a thread pool sized
    by SPATIAL_RATCHET_THREADS (default 1); averaging order is fixed, so
    the result is identical either way."""
    if n_reps < 1:
        raise ValueError("need at least one replicate")

    def one(rep: int) -> np.ndarray:
        snaps = simulate(params, profile, window, T, [T], base_seed + rep)
        return snaps[-1][1].values

    n_threads = int(os.environ.get("SPATIAL_RATCHET_THREADS", "1"))
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            fields = list(pool.map(one, range(n_reps)))
    else:
        fields = [one(rep) for rep in range(n_reps)]
    mean = np.zeros_like(fields[0])
    for f in fields:
        mean += f
    mean /= n_reps
    grid = Grid1D(-window.W / params.scaling.L_N, window.W / params.scaling.L_N,
                  window.n_demes)
    return DensityField(mean, grid, time=T)
