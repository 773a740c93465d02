"""Equilibrium profiles, proportion envelopes, and spreading-speed tools.

The central objects are the equilibrium ratios alpha_k, the time-dependent
lower/upper envelopes pi_lower_k(T) and pi_upper_k(T) that sandwich
u_k/u_0 for monostable dynamics, and the pulled-front speed
c* = sqrt(2m((1-mu)q_plus(0) - q_minus(0))).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateFitness,
    LevelNotCrossed,
    NegativeArgument,
    NoQualifyingNodes,
    NoRoot,
    NotMonostable,
)
from .model import (
    MassVector,
    ModelParams,
    ReactionClass,
    _polyder,
    _polyval,
    classify_reaction,
)
from .pde import DensityField, mass_norm

ROOT_TOL = 1e-12


def alpha_sequence(params: ModelParams, K: int) -> np.ndarray:
    """Equilibrium ratios alpha_k of class-k density to class-0 density:
    alpha_0 = 1, alpha_k = prod_{i<=k} mu*s_{i-1} / ((1-mu)(1-s_i))."""
    mu = params.mu
    s = params.fitness.values(K)
    alpha = np.zeros(K + 1)
    alpha[0] = 1.0
    if mu == 0.0:
        return alpha
    for k in range(1, K + 1):
        if s[k] >= 1.0:
            raise DegenerateFitness(
                f"s_{k} = 1 makes the equilibrium ratio formula singular"
            )
        alpha[k] = alpha[k - 1] * mu * s[k - 1] / ((1.0 - mu) * (1.0 - s[k]))
    return alpha


def q_extrema(params: ModelParams, grid_n: int = 4097) -> tuple[float, float]:
    """Extrema of q_plus over [0, 1]: endpoints plus interior critical
    points isolated by sign changes of q_plus' and refined by bisection."""
    coeffs = params.rates.q_plus
    der = _polyder(coeffs)
    candidates = [0.0, 1.0]
    grid = np.linspace(0.0, 1.0, grid_n)
    dv = _polyval(der, grid)
    sign_change = np.flatnonzero(np.sign(dv[:-1]) * np.sign(dv[1:]) < 0)
    for i in sign_change:
        lo, hi = grid[i], grid[i + 1]
        flo = _polyval(der, lo)
        while hi - lo > ROOT_TOL:
            mid = 0.5 * (lo + hi)
            fm = _polyval(der, mid)
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
        candidates.append(0.5 * (lo + hi))
    candidates.extend(grid[np.flatnonzero(dv == 0.0)])
    vals = [float(_polyval(coeffs, c)) for c in candidates]
    return min(vals), max(vals)


def _require_monostable(params: ModelParams):
    if classify_reaction(params) is ReactionClass.NOT_MONOSTABLE:
        raise NotMonostable("operation requires a monostable reaction term")


def _decay_rates(params: ModelParams, K: int) -> np.ndarray:
    """lambda_k = (1 - s_k)(1 - mu), the per-unit-q decay exponents."""
    s = params.fitness.values(K)
    return (1.0 - s) * (1.0 - params.mu)


def pi_lower(params: ModelParams, T_grid: np.ndarray, K: int) -> np.ndarray:
    """Tabulated lower envelopes pi_lower_k(T) on a uniform time grid.

    pi_lower_1 comes from its closed-form antiderivative; higher orders use
    the recursion
    pi_lower_k(T) = mu*s_{k-1}*Qmin * int_0^T pi_lower_{k-1}(T-t)
                    * exp(-t*Qmax*(1-s_k)(1-mu)) dt
    evaluated by trapezoidal convolution on the grid.  Rows are indexed by
    class 0..K (row 0 is identically 1).  The T -> infinity limit of row k
    is alpha_k * (Qmin/Qmax)**k.
    """
    _require_monostable(params)
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.ndim != 1 or T_grid.size < 2:
        raise ValueError("T_grid must hold at least two times")
    h = T_grid[1] - T_grid[0]
    if not np.allclose(np.diff(T_grid), h):
        raise ValueError("T_grid must be uniform for the convolution quadrature")
    q_min, q_max = q_extrema(params)
    lam = _decay_rates(params, K)
    s = params.fitness.values(K)
    mu = params.mu

    out = np.zeros((K + 1, T_grid.size))
    out[0] = 1.0
    if K >= 1:
        rate = q_max * lam[1]
        out[1] = mu * q_min * (1.0 - np.exp(-rate * T_grid)) / rate
    for k in range(2, K + 1):
        decay = np.exp(-q_max * lam[k] * T_grid)
        prev = out[k - 1]
        row = np.empty_like(T_grid)
        for i in range(T_grid.size):
            integrand = prev[i::-1] * decay[: i + 1]
            row[i] = np.trapz(integrand, dx=h)
        out[k] = mu * s[k - 1] * q_min * row
    return out


def pi_lower_limit(params: ModelParams, K: int) -> np.ndarray:
    """Analytic T -> infinity limit alpha_k (Qmin/Qmax)**k of pi_lower."""
    q_min, q_max = q_extrema(params)
    alpha = alpha_sequence(params, K)
    return alpha * (q_min / q_max) ** np.arange(K + 1)


def derive_pi_hat(profile, K: int, n_samples: int = 2048,
                  x_span: tuple[float, float] | None = None) -> np.ndarray:
    """Smallest admissible domination constants pi_hat_k = max f_k/f_0 over
    sample points where f_0 > 0 (the pointwise-minimal choice)."""
    if x_span is None:
        x_span = (-100.0, 100.0)
    x = np.linspace(*x_span, n_samples)
    vals = profile.values(x, K)
    mask = vals[0] > 0.0
    if not np.any(mask):
        raise NoQualifyingNodes("profile has no points with f_0 > 0")
    pi_hat = np.zeros(K + 1)
    pi_hat[0] = 1.0
    for k in range(1, K + 1):
        pi_hat[k] = float(np.max(vals[k, mask] / vals[0, mask]))
    return pi_hat


def phi_and_pi_upper(
    params: ModelParams,
    pi_hat: np.ndarray,
    T_grid: np.ndarray,
    K: int,
    tail_warn: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transient envelopes: phi_k(T) (finite double sum), the total
    Phi(T) = sum_k phi_k(T), and the upper envelopes
    pi_upper_k(T) = pi_hat_k exp(-T*Qmin*(1-s_k)(1-mu)) + phi_k(T)
                    + alpha_k (Qmax/Qmin)**k.

    Returns (phi[k, i], Phi[i], pi_upper[k, i]) over the time grid; rows are
    classes 0..K with phi_0 = phi_1 = 0.
    """
    _require_monostable(params)
    T_grid = np.asarray(T_grid, dtype=float)
    pi_hat = np.asarray(pi_hat, dtype=float)
    if pi_hat.size < K + 1:
        raise ValueError("pi_hat must provide classes 0..K")
    q_min, q_max = q_extrema(params)
    lam = _decay_rates(params, K)
    s = params.fitness.values(K)
    mu = params.mu
    alpha = alpha_sequence(params, K)

    phi = np.zeros((K + 1, T_grid.size))
    for k in range(2, K + 1):
        acc = np.zeros(T_grid.size)
        for i in range(1, k):
            poly = (mu * q_max * T_grid) ** (k - i) / math.factorial(k - i)
            fit_prod = float(np.prod(s[i:k]))
            acc += poly * fit_prod * pi_hat[i] * np.exp(-q_min * lam[i] * T_grid)
        phi[k] = acc
    Phi = phi.sum(axis=0)

    big = Phi > 0.0
    if K >= 2 and np.any(phi[K, big] > tail_warn * Phi[big]):
        import warnings

        warnings.warn(
            "class-K transient term is not negligible; raise K",
            RuntimeWarning,
            stacklevel=2,
        )

    ratio = (q_max / q_min) ** np.arange(K + 1)
    pi_up = (
        pi_hat[: K + 1, None] * np.exp(-q_min * lam[:, None] * T_grid[None, :])
        + phi
        + (alpha * ratio)[:, None]
    )
    pi_up[0] = 1.0
    return phi, Phi, pi_up


@dataclass(frozen=True)
class BoundSequences:
    """Tabulated envelopes over a time grid, rows indexed by class."""

    T_grid: np.ndarray
    alpha: np.ndarray
    pi_hat: np.ndarray
    pi_lower: np.ndarray
    pi_upper: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray


def bound_sequences(
    params: ModelParams, T_grid: np.ndarray, K: int, pi_hat: np.ndarray | None = None
) -> BoundSequences:
    if pi_hat is None:
        pi_hat = alpha_sequence(params, K)
    low = pi_lower(params, T_grid, K)
    phi, Phi, up = phi_and_pi_upper(params, pi_hat, T_grid, K)
    return BoundSequences(
        T_grid=np.asarray(T_grid, dtype=float),
        alpha=alpha_sequence(params, K),
        pi_hat=np.asarray(pi_hat, dtype=float),
        pi_lower=low,
        pi_upper=up,
        phi=phi,
        Phi=Phi,
    )


@dataclass(frozen=True)
class SpeedDiagnostics:
    Q_min: float
    Q_max: float
    H_min: float
    H_max: float
    U_eq: float
    c_star: float
    is_fisher_kpp: bool


def c_star(params: ModelParams) -> float:
    """Pulled-front speed sqrt(2m((1-mu)q_plus(0) - q_minus(0))); the
    value is interpretable as the spreading speed only under the
    Fisher-KPP condition, but is computed for any parameters."""
    growth0 = (1.0 - params.mu) * params.rates.eval_plus(0.0) \
        - params.rates.eval_minus(0.0)
    if growth0 < 0.0:
        raise NegativeArgument(
            f"edge growth rate {growth0:g} is negative; no pulled speed"
        )
    return math.sqrt(2.0 * params.m * growth0)


def conjectured_speed_FE(r: float, B: float, m: float, mu: float) -> float:
    """Reported-only speed for the q_plus = r(BU+1), q_minus = r(BU+1)U
    family: the pulled value sqrt(2mr(1-mu)) for B <= 2/(1-mu) and the
    pushed-wave expression ((B(1-mu)+2)/2)*sqrt(mr/B) beyond, which is
    unproven above 1/(1-mu) and must never gate acceptance."""
    if B <= 2.0 / (1.0 - mu):
        return math.sqrt(2.0 * m * r * (1.0 - mu))
    return (B * (1.0 - mu) + 2.0) / 2.0 * math.sqrt(m * r / B)


def speed_diagnostics(params: ModelParams) -> SpeedDiagnostics:
    q_min, q_max = q_extrema(params)
    grid = np.linspace(0.0, 1.0, 4097)
    growth = (1.0 - params.mu) * params.rates.eval_plus(grid) \
        - params.rates.eval_minus(grid)
    u_eq, _ = u_equilibrium(params)
    return SpeedDiagnostics(
        Q_min=q_min,
        Q_max=q_max,
        H_min=float(growth.min()),
        H_max=float(growth[0]),
        U_eq=u_eq,
        c_star=c_star(params),
        is_fisher_kpp=classify_reaction(params) is ReactionClass.FISHER_KPP,
    )


def u_equilibrium(params: ModelParams, K: int = 32) -> tuple[float, MassVector]:
    """Smallest positive root U_eq of (1-mu)q_plus - q_minus on (0, 1],
    located by bracketed bisection from 0, together with the equilibrium
    state U_eq * alpha_k / sum(alpha) (overflow entry balances its own
    mutation inflow)."""
    _require_monostable(params)

    def g(u):
        return (1.0 - params.mu) * params.rates.eval_plus(u) \
            - params.rates.eval_minus(u)

    grid = np.linspace(0.0, 1.0, 4097)
    vals = g(grid)
    idx = np.flatnonzero((vals[:-1] > 0.0) & (vals[1:] <= 0.0))
    if idx.size == 0:
        raise NoRoot("no sign change of (1-mu)q_plus - q_minus in [0, 1]")
    lo, hi = grid[idx[0]], grid[idx[0] + 1]
    while hi - lo > ROOT_TOL:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    u_eq = 0.5 * (lo + hi)

    alpha = alpha_sequence(params, K)
    values = np.zeros(K + 2)
    values[: K + 1] = u_eq * alpha / alpha.sum()
    s_K = params.fitness.eval(K)
    qm = params.rates.eval_minus(u_eq)
    if qm > 0.0:
        values[K + 1] = params.mu * s_K * params.rates.eval_plus(u_eq) \
            * values[K] / qm
    return float(u_eq), MassVector(values)


def front_position(field: DensityField, level: float) -> float:
    """Rightmost x where the per-node total mass crosses `level`, linearly
    interpolated between neighbouring nodes."""
    mass = mass_norm(field)
    if level <= 0.0 or level >= float(mass.max()) or not np.isfinite(level):
        if level <= 0.0:
            raise ValueError("level must be positive")
        raise LevelNotCrossed(
            f"mass never reaches level {level:g} (max {float(mass.max()):g})"
        )
    above = np.flatnonzero(mass >= level)
    i = int(above.max())
    x = field.grid.x
    if i == field.grid.nx - 1:
        return float(x[-1])
    frac = (mass[i] - level) / (mass[i] - mass[i + 1])
    return float(x[i] + frac * (x[i + 1] - x[i]))


def estimate_speed(
    snapshots, level: float, t_window: tuple[float, float]
) -> tuple[float, float]:
    """Least-squares slope of the front position over snapshots whose times
    fall inside t_window, with the regression standard error of the slope.
    Snapshots are (time, DensityField) pairs."""
    pts = [
        (t, front_position(f, level))
        for t, f in snapshots
        if t_window[0] - 1e-12 <= t <= t_window[1] + 1e-12
    ]
    if len(pts) < 2:
        raise ValueError("need at least two snapshots inside the window")
    t = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    tbar = t.mean()
    sxx = float(((t - tbar) ** 2).sum())
    slope = float(((t - tbar) * (y - y.mean())).sum() / sxx)
    resid = y - (y.mean() + slope * (t - tbar))
    dof = len(pts) - 2
    stderr = math.sqrt(float((resid**2).sum()) / dof / sxx) if dof > 0 else 0.0
    return slope, stderr


def poisson_limit(mu: float, s: float, n: int, K: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Weak-selection, low-mutation comparison: normalised equilibrium
    profile alpha^(n) built with geometric fitness s/n and mutation mu/n
    against the Poisson(mu/s) mass function; returns both normalised
    profiles on classes 0..K and their l1 distance."""
    s_n = s / n
    mu_n = mu / n
    if not (0.0 < s_n < 1.0 and 0.0 < mu_n < 1.0):
        raise ValueError("s/n and mu/n must lie in (0, 1)")
    from .model import FitnessSequence, ModelParams, RatePolynomials, Scaling

    params = ModelParams(
        m=1.0,
        mu=mu_n,
        fitness=FitnessSequence.geometric(s_n),
        rates=RatePolynomials(q_plus=(1.0,), q_minus=(0.0, 1.0)),
        scaling=Scaling(N=1),
    )
    alpha = alpha_sequence(params, K)
    alpha_norm = alpha / alpha.sum()
    lam = mu / s
    ks = np.arange(K + 1)
    poisson = np.exp(-lam) * lam**ks / np.array(
        [math.factorial(int(k)) for k in ks], dtype=float
    )
    dist = float(np.abs(alpha_norm - poisson).sum())
    return alpha_norm, poisson, dist


def ratio_profile(field: DensityField, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-class ratios u_k/u_0 restricted to nodes where u_0 > floor.

    Returns (node_indices, ratios[k, j]) with k = 0..K+1 over qualifying
    nodes j."""
    if floor <= 0.0:
        raise ValueError("floor must be positive")
    u0 = field.values[0]
    nodes = np.flatnonzero(u0 > floor)
    if nodes.size == 0:
        raise NoQualifyingNodes(f"no node has u_0 > {floor:g}")
    return nodes, field.values[:, nodes] / u0[nodes]
