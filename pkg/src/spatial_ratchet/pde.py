"""Method-of-lines solver for the truncated reaction-diffusion system.

du_k/dt = (m/2) * Lap u_k + F_k(u) on a uniform 1D grid with zero-flux
boundaries, optionally co-evolving a tracer field driven by the labelled
reaction term with the same total-mass argument.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, TracerExceedsTotal
from .model import ModelParams, reaction_field, reaction_field_star
from .profiles import InitialProfile

BLOWUP_LIMIT = 1e6
TAIL_MASS_WARN = 1e-8


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    nx: int

    def __post_init__(self):
        if self.nx < 3:
            raise ValueError("grid needs at least 3 nodes")
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @classmethod
    def from_dx(cls, x_min: float, x_max: float, dx: float) -> "Grid1D":
        nx = int(round((x_max - x_min) / dx)) + 1
        return cls(x_min, x_max, nx)


@dataclass
class DensityField:
    """values[k, i]: density of class k at node i (k = K+1 is overflow)."""

    values: np.ndarray
    grid: Grid1D
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.nx:
            raise ValueError("field shape must be (K+2, nx)")

    @property
    def K(self) -> int:
        return self.values.shape[0] - 2

    def copy(self) -> "DensityField":
        return DensityField(self.values.copy(), self.grid, self.time)


def mass_norm(fld: DensityField) -> np.ndarray:
    """Per-node total mass, summed over every class including overflow."""
    return fld.values.sum(axis=0)


def laplacian_array(values: np.ndarray, dx: float) -> np.ndarray:
    """Second-order central-difference approximation with mirrored ghost nodes
    (u_{-1} = u_1, u_{nx} = u_{nx-2}), i.e. zero-flux walls."""
    out = np.empty_like(values)
    out[..., 1:-1] = values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]
    out[..., 0] = 2.0 * (values[..., 1] - values[..., 0])
    out[..., -1] = 2.0 * (values[..., -2] - values[..., -1])
    out /= dx * dx
    return out


def laplacian(fld: DensityField) -> DensityField:
    return DensityField(laplacian_array(fld.values, fld.grid.dx), fld.grid, fld.time)


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "rk4"
    dt: float | None = None
    safety: float = 0.4
    clamp_negatives: bool = True
    snapshot_times: tuple[float, ...] = ()
    K: int = 32

    def __post_init__(self):
        if self.scheme not in ("rk4", "euler"):
            raise ValueError("scheme must be 'rk4' or 'euler'")
        if self.dt is not None and self.dt <= 0.0:
            raise ValueError("dt must be positive")

    def step_size(self, grid: Grid1D, m: float) -> float:
        limit = grid.dx**2 / m
        dt = self.safety * limit if self.dt is None else self.dt
        if dt > limit:
            raise ValueError(
                f"dt={dt:g} violates the diffusive stability bound dx^2/m={limit:g}"
            )
        return dt


@dataclass
class SolveDiagnostics:
    clamped_mass: float = 0.0
    steps: int = 0
    tail_mass_max: float = 0.0


def _initial_values(profile, grid, K, tracer=False):
    return profile.values(grid.x, K, tracer=tracer)


def _check_finite(values, t):
    if not np.all(np.isfinite(values)) or np.max(np.abs(values)) > BLOWUP_LIMIT:
        raise BlowUp(f"solution left the admissible range at t={t:g}")


def solve(
    params: ModelParams,
    profile: InitialProfile,
    grid: Grid1D,
    cfg: SolverConfig,
    T: float,
    diagnostics: SolveDiagnostics | None = None,
) -> list[tuple[float, DensityField]]:
    """Integrate the truncated system to time T, snapshotting at the times
    requested in cfg (always including 0 and T if listed there)."""
    snaps = solve_with_tracer(params, profile, None, grid, cfg, T, diagnostics)
    return [(t, u) for t, u, _ in snaps]


def solve_with_tracer(
    params: ModelParams,
    profile: InitialProfile,
    tracer_profile: InitialProfile | None,
    grid: Grid1D,
    cfg: SolverConfig,
    T: float,
    diagnostics: SolveDiagnostics | None = None,
) -> list[tuple[float, DensityField, DensityField | None]]:
    """Co-evolve the total field and (optionally) the labelled field.

    The labelled reaction uses the same total-mass argument inside the rate
    polynomials, evaluated at the same Runge-Kutta stages, so full labelling
    reproduces the plain system exactly.
    """
    K = cfg.K
    dt = cfg.step_size(grid, params.m)
    half_m = params.m / 2.0
    dx = grid.dx

    u = _initial_values(profile, grid, K)
    ustar = None
    if tracer_profile is not None:
        merged = InitialProfile(
            shapes=dict(profile.shapes), tracer_shapes=dict(tracer_profile.shapes)
        )
        merged.check_tracer_dominated(grid.x, K)
        ustar = _initial_values(tracer_profile, grid, K)
    elif profile.tracer_shapes is not None:
        profile.check_tracer_dominated(grid.x, K)
        ustar = profile.values(grid.x, K, tracer=True)

    diag = diagnostics if diagnostics is not None else SolveDiagnostics()

    def rhs(v, w):
        dv = half_m * laplacian_array(v, dx) + reaction_field(v, params)
        dw = None
        if w is not None:
            dw = half_m * laplacian_array(w, dx) + reaction_field_star(v, w, params)
        return dv, dw

    def advance(v, w):
        if cfg.scheme == "euler":
            dv, dw = rhs(v, w)
            v = v + dt * dv
            w = None if w is None else w + dt * dw
            return v, w
        k1v, k1w = rhs(v, w)
        k2v, k2w = rhs(v + 0.5 * dt * k1v, None if w is None else w + 0.5 * dt * k1w)
        k3v, k3w = rhs(v + 0.5 * dt * k2v, None if w is None else w + 0.5 * dt * k2w)
        k4v, k4w = rhs(v + dt * k3v, None if w is None else w + dt * k3w)
        v = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if w is not None:
            w = w + (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        return v, w

    def clamp(v):
        if cfg.clamp_negatives:
            neg = v < 0.0
            if np.any(neg):
                diag.clamped_mass += float(-v[neg].sum()) * dx
                v[neg] = 0.0
        return v

    snapshot_times = sorted(set(float(t) for t in cfg.snapshot_times)) or [float(T)]
    if any(t < 0.0 or t > T + 1e-12 for t in snapshot_times):
        raise ValueError("snapshot times must lie in [0, T]")

    out: list[tuple[float, DensityField, DensityField | None]] = []
    t = 0.0
    n_steps = int(round(T / dt)) if T > 0 else 0
    # uniform steps; snapshots land on the nearest completed step
    snap_iter = iter(snapshot_times)
    next_snap = next(snap_iter, None)

    def emit(t_now):
        nonlocal next_snap
        while next_snap is not None and t_now >= next_snap - dt / 2.0:
            fld = DensityField(u.copy(), grid, next_snap)
            sfld = None if ustar is None else DensityField(ustar.copy(), grid, next_snap)
            out.append((next_snap, fld, sfld))
            next_snap = next(snap_iter, None)

    emit(0.0)
    for i in range(n_steps):
        u, ustar = advance(u, ustar)
        u = clamp(u)
        if ustar is not None:
            ustar = clamp(ustar)
        t = (i + 1) * dt
        if (i + 1) % 256 == 0 or i + 1 == n_steps:
            _check_finite(u, t)
        diag.steps += 1
        emit(t)

    tail = float(u[-1].max()) if u.size else 0.0
    diag.tail_mass_max = max(diag.tail_mass_max, tail)
    if tail > TAIL_MASS_WARN:
        warnings.warn(
            f"overflow-class mass reached {tail:.2e}; raise the class cap K",
            RuntimeWarning,
            stacklevel=2,
        )
    return out
