"""Independent reference computations that cross-validate the solvers.

Nothing here shares a numerical path with the finite-difference solver or
the event simulator: the ODE reduction uses an adaptive embedded RK pair,
the mild-solution oracle builds on heat-kernel convolutions, and the path
estimator integrates the growth functional along Brownian paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import erf

from .errors import BlowUp, HistoryGap, NoContraction
from .model import MassVector, ModelParams, reaction_field
from .pde import BLOWUP_LIMIT, DensityField, Grid1D
from .profiles import InitialProfile

KERNEL_ROW_SUM_TOL = 1e-12


def logistic_exact(u0: float, t: float) -> float:
    """Closed form for du/dt = u(1-u): u0*e^t / (1 + u0*(e^t - 1))."""
    if u0 < 0.0:
        raise ValueError("u0 must be nonnegative")
    if u0 == 0.0:
        return 0.0
    # stable form for large t
    emt = math.exp(-t)
    return u0 / (emt + u0 * (1.0 - emt))


def ode_reduce_solve(
    params: ModelParams,
    u0: MassVector | np.ndarray,
    T: float,
    dt_ode: float | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """Spatially homogeneous reduction du/dt = F(u), integrated with an
    adaptive Dormand-Prince pair (independent of the PDE stepper).

    Returns (times, trajectory) with trajectory[i] the state at times[i];
    dt_ode fixes the output spacing (default 64 outputs).
    """
    y0 = np.asarray(u0.values if isinstance(u0, MassVector) else u0, dtype=float)
    if dt_ode is None:
        times = np.linspace(0.0, T, 65)
    else:
        times = np.arange(0.0, T + dt_ode / 2.0, dt_ode)
        if times[-1] < T:
            times = np.append(times, T)
    if T == 0.0:
        return np.array([0.0]), y0[None, :].copy()

    sol = solve_ivp(
        lambda _t, y: reaction_field(y, params),
        (0.0, T),
        y0,
        method="RK45",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise BlowUp(f"ODE reduction failed: {sol.message}")
    traj = sol.y.T
    if not np.all(np.isfinite(traj)) or np.max(np.abs(traj)) > BLOWUP_LIMIT:
        raise BlowUp("ODE reduction left the admissible range")
    return sol.t, traj


# ---------------------------------------------------------------------------
# Duhamel / Picard oracle


class PicardWorkspace:
    """Discrete heat kernels for the Duhamel quadrature on a fixed grid.

    Kernel rows are cell integrals of the speed-m Gaussian over grid cells
    (well behaved even when the kernel width is below dx), renormalised to
    unit sum; rows must sum to 1 within 1e-12.
    """

    def __init__(self, grid: Grid1D, m: float, dt_quad: float, n_levels: int):
        self.grid = grid
        self.m = m
        self.dt_quad = dt_quad
        self.n_levels = n_levels
        self.kernels = [
            self._cell_kernel(k * dt_quad) for k in range(1, n_levels + 1)
        ]
        for row in self.kernels:
            if abs(row.sum() - 1.0) > KERNEL_ROW_SUM_TOL:
                raise AssertionError("discrete kernel row not normalised")

    def _cell_kernel(self, tau: float) -> np.ndarray:
        dx = self.grid.dx
        sigma = math.sqrt(self.m * tau)
        half = max(8, int(np.ceil(8.0 * sigma / dx)))
        offsets = np.arange(-half, half + 1) * dx
        a = (offsets - dx / 2.0) / (sigma * math.sqrt(2.0))
        b = (offsets + dx / 2.0) / (sigma * math.sqrt(2.0))
        row = 0.5 * (erf(b) - erf(a))
        return row / row.sum()

    def apply(self, level: int, values: np.ndarray) -> np.ndarray:
        """Apply the level-th kernel (level 0 is the identity) row-wise."""
        if level == 0:
            return values.copy()
        row = self.kernels[level - 1]
        half = (row.size - 1) // 2
        padded = np.pad(values, [(0, 0)] * (values.ndim - 1) + [(half, half)])
        out = np.empty_like(values)
        for idx in np.ndindex(values.shape[:-1]):
            out[idx] = np.convolve(padded[idx], row, mode="valid")
        return out


@dataclass
class PicardResult:
    field: DensityField
    sup_distances: list[float]
    contraction_factors: list[float]

    @property
    def final_contraction(self) -> float:
        return self.contraction_factors[-1] if self.contraction_factors else 0.0


def duhamel_picard(
    profile: InitialProfile,
    params: ModelParams,
    grid: Grid1D,
    T_short: float,
    n_iter: int,
    K: int = 32,
    n_levels: int = 32,
) -> PicardResult:
    """Fixed-point iteration of the mild-solution map
    u(t) = P_t f + integral_0^t P_{t-s} F(u(s)) ds
    on n_levels+1 uniform time levels with trapezoidal quadrature.

    Successive-iterate sup distances must shrink; NoContraction is raised
    if they grow while still above round-off.
    """
    if T_short <= 0.0:
        raise ValueError("T_short must be positive")
    dt = T_short / n_levels
    ws = PicardWorkspace(grid, params.m, dt, n_levels)

    f = profile.values(grid.x, K)
    # heat-only baseline: trajectory[i] = P_{t_i} f
    traj = np.stack([ws.apply(i, f) for i in range(n_levels + 1)])
    base = traj.copy()

    sup_distances: list[float] = []
    factors: list[float] = []
    floor = 1e-13 * max(1.0, float(np.abs(f).max()))
    for _ in range(n_iter):
        reactions = np.stack([reaction_field(traj[i], params)
                              for i in range(n_levels + 1)])
        new = base.copy()
        for i in range(1, n_levels + 1):
            acc = 0.5 * (ws.apply(i, reactions[0]) + reactions[i])
            for j in range(1, i):
                acc += ws.apply(i - j, reactions[j])
            new[i] += dt * acc
        dist = float(np.max(np.abs(new - traj)))
        if sup_distances:
            prev = sup_distances[-1]
            if dist > prev and dist > floor:
                raise NoContraction(
                    f"iterate distance grew from {prev:.3e} to {dist:.3e}; "
                    "shorten the horizon"
                )
            factors.append(dist / prev if prev > 0 else 0.0)
        sup_distances.append(dist)
        traj = new

    return PicardResult(
        field=DensityField(traj[-1], grid, T_short),
        sup_distances=sup_distances,
        contraction_factors=factors,
    )


# ---------------------------------------------------------------------------
# Feynman-Kac estimator


@dataclass
class PathEstimate:
    mean: float
    stderr: float
    n_paths: int


class MassHistory:
    """Stored total-mass trajectory ||u(t, .)|| on a grid, interpolated
    linearly in space and time; spatial queries outside the grid clamp to
    the nearest node, temporal queries outside [t0, t1] raise HistoryGap.
    """

    def __init__(self, times: np.ndarray, grid: Grid1D, mass: np.ndarray):
        self.times = np.asarray(times, dtype=float)
        self.grid = grid
        self.mass = np.asarray(mass, dtype=float)
        if self.mass.shape != (self.times.size, grid.nx):
            raise ValueError("mass array must be (n_times, nx)")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def from_snapshots(cls, snapshots) -> "MassHistory":
        times = np.array([t for t, _ in snapshots])
        grid = snapshots[0][1].grid
        mass = np.stack([fld.values.sum(axis=0) for _, fld in snapshots])
        return cls(times, grid, mass)

    def covers(self, t0: float, t1: float) -> bool:
        eps = 1e-9 * max(1.0, abs(t1))
        return self.times[0] <= t0 + eps and self.times[-1] >= t1 - eps

    def at(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        eps = 1e-9 * max(1.0, float(self.times[-1]))
        if np.any(t < self.times[0] - eps) or np.any(t > self.times[-1] + eps):
            raise HistoryGap("queried time outside the stored trajectory")
        t = np.clip(t, self.times[0], self.times[-1])
        it = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0,
                     self.times.size - 2)
        wt = (t - self.times[it]) / (self.times[it + 1] - self.times[it])

        xg = (np.asarray(x) - self.grid.x_min) / self.grid.dx
        xg = np.clip(xg, 0.0, self.grid.nx - 1.0)
        ix = np.clip(xg.astype(np.int64), 0, self.grid.nx - 2)
        wx = xg - ix

        def bilin(rows):
            lo = self.mass[rows, ix]
            hi = self.mass[rows, ix + 1]
            return lo * (1.0 - wx) + hi * wx

        return bilin(it) * (1.0 - wt) + bilin(it + 1) * wt


def feynman_kac_u0(
    params: ModelParams,
    mass_history: MassHistory,
    profile: InitialProfile,
    T: float,
    x: float,
    n_paths: int,
    n_time_steps: int,
    seed: int,
    block_size: int = 4096,
) -> PathEstimate:
    """Monte Carlo estimate of the mutation-free density via
    u_0(T, x) = E_x[ f_0(W_T) exp(int_0^T ((1-mu)q_+ - q_-)(||u(T-s, W_s)||) ds) ]
    with W a Brownian path at speed m, left-endpoint quadrature of the
    exponent over n_time_steps uniform sub-intervals, and the stored mass
    field interpolated in space and time.
    """
    if not mass_history.covers(0.0, T):
        raise HistoryGap("mass history does not cover [0, T]")
    dt = T / n_time_steps
    sqrt_step = math.sqrt(params.m * dt)
    one_minus_mu = 1.0 - params.mu
    f0 = profile.shape(0)

    values = np.empty(n_paths)
    done = 0
    block_idx = 0
    while done < n_paths:
        nb = min(block_size, n_paths - done)
        rng = np.random.default_rng([seed, block_idx])
        pos = np.full(nb, float(x))
        log_weight = np.zeros(nb)
        for j in range(n_time_steps):
            # left endpoint: mass field at time T - t_j, position W(t_j)
            mass = mass_history.at(np.full(nb, T - j * dt), pos)
            growth = one_minus_mu * params.rates.eval_plus(mass) \
                - params.rates.eval_minus(mass)
            log_weight += growth * dt
            pos += sqrt_step * rng.standard_normal(nb)
        values[done : done + nb] = f0(pos) * np.exp(log_weight)
        done += nb
        block_idx += 1

    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return PathEstimate(mean=mean, stderr=stderr, n_paths=n_paths)


def heat_convolution(
    profile: InitialProfile, grid: Grid1D, m: float, t: float, k: int = 0
) -> np.ndarray:
    """Exact Gaussian smoothing of one profile class: closed form for
    indicator and Gaussian shapes, quadrature-free."""
    sh = profile.shape(k)
    x = grid.x
    if t == 0.0:
        return sh(x)
    s2 = m * t
    from .profiles import Constant, GaussianBump, Indicator

    if isinstance(sh, Constant):
        return np.full(grid.nx, sh.c)
    if isinstance(sh, Indicator):
        z = math.sqrt(2.0 * s2)
        return 0.5 * sh.c * (erf((sh.b - x) / z) - erf((sh.a - x) / z))
    if isinstance(sh, GaussianBump):
        var = sh.width**2 + s2
        amp = sh.height * sh.width / math.sqrt(var)
        return amp * np.exp(-((x - sh.center) ** 2) / (2.0 * var))
    raise TypeError(f"no closed-form heat solution for {type(sh).__name__}")
