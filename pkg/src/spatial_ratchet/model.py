"""Model parameters and reaction terms for the spatial Muller's ratchet.

The population is structured by mutation class k = 0..K plus one aggregate
overflow class at index K+1 that collects every mutation past the cap: it
receives mutation inflow, migrates and dies normally, and never reproduces.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidFitness

#: default grid resolution for polynomial sign checks on [0, 1]
DEFAULT_SIGN_GRID = 4097

#: full norm recomputation cadence for incrementally updated mass vectors
NORM_RECOMPUTE_PERIOD = 1 << 16


class FitnessKind(enum.Enum):
    GEOMETRIC = "geometric"
    HARMONIC = "harmonic"
    TABLE = "table"


@dataclass(frozen=True)
class FitnessSequence:
    """Non-increasing fitness values s_k with s_0 = 1.

    ``Geometric(s)`` gives s_k = (1-s)^k, ``Harmonic`` gives s_k = 1/(k+1)
    (a mild form of epistasis), and ``Table`` holds explicit values that are
    extended beyond the table by the final entry only if that entry is 0.
    """

    kind: FitnessKind
    s: float = 0.0
    table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind is FitnessKind.GEOMETRIC:
            if not 0.0 < self.s < 1.0:
                raise InvalidFitness(f"geometric parameter must be in (0,1), got {self.s}")
        elif self.kind is FitnessKind.TABLE:
            vals = self.table
            if not vals or vals[0] != 1.0:
                raise InvalidFitness("fitness table must start with s_0 = 1")
            if any(v < 0 for v in vals):
                raise InvalidFitness("fitness values must be nonnegative")
            if any(vals[i + 1] > vals[i] for i in range(len(vals) - 1)):
                raise InvalidFitness("fitness table must be non-increasing")

    @classmethod
    def geometric(cls, s: float) -> "FitnessSequence":
        return cls(FitnessKind.GEOMETRIC, s=s)

    @classmethod
    def harmonic(cls) -> "FitnessSequence":
        return cls(FitnessKind.HARMONIC)

    @classmethod
    def from_table(cls, values) -> "FitnessSequence":
        return cls(FitnessKind.TABLE, table=tuple(float(v) for v in values))

    def eval(self, k: int) -> float:
        if k < 0:
            raise ValueError("mutation class must be nonnegative")
        if self.kind is FitnessKind.GEOMETRIC:
            return (1.0 - self.s) ** k
        if self.kind is FitnessKind.HARMONIC:
            return 1.0 / (k + 1)
        if k < len(self.table):
            return self.table[k]
        tail = self.table[-1]
        if tail != 0.0:
            raise InvalidFitness(
                "fitness table queried beyond its length; extension is only "
                "defined when the final value is 0"
            )
        return 0.0

    def values(self, K: int) -> np.ndarray:
        """s_0..s_K as an array."""
        return np.array([self.eval(k) for k in range(K + 1)], dtype=float)

    def strictly_decreasing(self, K: int) -> bool:
        v = self.values(K)
        return bool(np.all(np.diff(v) < 0.0))


@dataclass(frozen=True)
class RatePolynomials:
    """Per-capita birth/death rate polynomials q_plus and q_minus.

    Coefficients are stored in ascending degree.  deg q_plus < deg q_minus
    and the leading coefficient of q_minus is positive, which makes death
    dominate at high density and regulates the local population.
    """

    q_plus: tuple[float, ...]
    q_minus: tuple[float, ...]
    u_cap: float = 10.0

    def __post_init__(self):
        qp = _trim(self.q_plus)
        qm = _trim(self.q_minus)
        object.__setattr__(self, "q_plus", qp)
        object.__setattr__(self, "q_minus", qm)
        if qp == (0.0,) and qm == (0.0,):
            return  # diagnostic rate-free case: pure-migration dynamics
        if len(qp) - 1 >= len(qm) - 1:
            raise ValueError("deg q_plus must be strictly less than deg q_minus")
        if qm[-1] <= 0.0:
            raise ValueError("leading coefficient of q_minus must be positive")
        grid = np.linspace(0.0, self.u_cap, DEFAULT_SIGN_GRID)
        if np.any(self.eval_plus(grid) < 0.0):
            raise ValueError(f"q_plus negative on [0, {self.u_cap}]")
        if np.any(self.eval_minus(grid) < 0.0):
            raise ValueError(f"q_minus negative on [0, {self.u_cap}]")

    def eval_plus(self, u):
        return _polyval(self.q_plus, u)

    def eval_minus(self, u):
        return _polyval(self.q_minus, u)

    @classmethod
    def logistic_cooperative(cls, r: float, B: float) -> "RatePolynomials":
        """The density-dependent family q_plus = r(BU+1), q_minus = r(BU+1)U."""
        return cls(q_plus=(r, r * B), q_minus=(0.0, r, r * B))

    @classmethod
    def strong_allee(cls, B: float) -> "RatePolynomials":
        """q_plus = U(B+1), q_minus = U^2 + B: growth negative at low density."""
        return cls(q_plus=(0.0, B + 1.0), q_minus=(B, 0.0, 1.0))

    @classmethod
    def zero(cls) -> "RatePolynomials":
        """No births or deaths: migration-only diagnostics."""
        return cls(q_plus=(0.0,), q_minus=(0.0,))


def _trim(coeffs) -> tuple[float, ...]:
    c = [float(x) for x in coeffs]
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    if not c:
        c = [0.0]
    return tuple(c)


def _polyval(coeffs, u):
    """Horner evaluation of an ascending-degree coefficient tuple."""
    u = np.asarray(u, dtype=float)
    out = np.full_like(u, coeffs[-1], dtype=float)
    for c in coeffs[-2::-1]:
        out = out * u + c
    if out.ndim == 0:
        return float(out)
    return out


def _polyder(coeffs) -> tuple[float, ...]:
    if len(coeffs) == 1:
        return (0.0,)
    return tuple(k * c for k, c in enumerate(coeffs) if k >= 1)


@dataclass(frozen=True)
class Scaling:
    """Carrying capacity N and the lattice scale tied to it.

    L_N = round(L_ratio * N) (at least 1) and m_N = m * L_N**2, so that
    m_N / L_N**2 equals the macroscopic diffusivity exactly.
    """

    N: int
    L_ratio: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("carrying capacity N must be >= 1")
        if self.L_ratio <= 0.0:
            raise ValueError("L_ratio must be positive")

    @property
    def L_N(self) -> int:
        return max(1, round(self.L_ratio * self.N))


@dataclass(frozen=True)
class ModelParams:
    m: float
    mu: float
    fitness: FitnessSequence
    rates: RatePolynomials
    scaling: Scaling = field(default_factory=lambda: Scaling(N=100))

    def __post_init__(self):
        if self.m <= 0.0:
            raise ValueError("diffusivity m must be positive")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mutation probability must lie in [0, 1]")

    @property
    def m_N(self) -> float:
        return self.m * self.scaling.L_N ** 2


def figure1_params(N: int = 100, L_ratio: float = 1.0) -> ModelParams:
    """The classical pulled-front preset: m=3, q_plus=1, q_minus=U,
    mu=0.025, geometric fitness with s=0.05."""
    return ModelParams(
        m=3.0,
        mu=0.025,
        fitness=FitnessSequence.geometric(0.05),
        rates=RatePolynomials(q_plus=(1.0,), q_minus=(0.0, 1.0)),
        scaling=Scaling(N=N, L_ratio=L_ratio),
    )


class MassVector:
    """Class-indexed nonnegative masses u_0..u_{K+1} with a cached l1 norm.

    Index K+1 is the aggregate overflow class.  State vectors are validated
    as nonnegative; reaction outputs reuse the container with validation
    off since derivatives carry signs.
    """

    __slots__ = ("values", "_norm", "_updates")

    def __init__(self, values, validate: bool = True):
        self.values = np.asarray(values, dtype=float).copy()
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("mass vector needs K+2 >= 2 entries")
        if validate and np.any(self.values < 0.0):
            raise ValueError("mass vector entries must be nonnegative")
        self._norm = float(self.values.sum())
        self._updates = 0

    @property
    def K(self) -> int:
        return self.values.size - 2

    @property
    def norm(self) -> float:
        return self._norm

    def set_entry(self, k: int, value: float):
        """Incremental update; the cached norm is refreshed from scratch
        every NORM_RECOMPUTE_PERIOD edits to bound float drift."""
        self._norm += value - self.values[k]
        self.values[k] = value
        self._updates += 1
        if self._updates >= NORM_RECOMPUTE_PERIOD:
            self._norm = float(self.values.sum())
            self._updates = 0

    def copy(self) -> "MassVector":
        return MassVector(self.values, validate=False)

    def __len__(self):
        return self.values.size

    def __getitem__(self, k):
        return self.values[k]


def reaction_field(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Reaction term on an array of shape (K+2,) or (K+2, nx).

    Classes 0..K reproduce at per-capita rate s_k * q_plus(total mass); a
    birth keeps the parent class with probability 1-mu and moves one class
    up otherwise (class K feeds the overflow).  Every class dies at rate
    q_minus(total mass).
    """
    u = np.asarray(values, dtype=float)
    K = u.shape[0] - 2
    s = params.fitness.values(K)
    mass = u.sum(axis=0)
    qp = params.rates.eval_plus(mass)
    qm = params.rates.eval_minus(mass)
    out = np.empty_like(u)
    sb = s.reshape((K + 1,) + (1,) * (u.ndim - 1))
    out[: K + 1] = qp * (1.0 - params.mu) * sb * u[: K + 1]
    out[1 : K + 2] += qp * params.mu * sb * u[: K + 1]
    out -= qm * u
    return out


def reaction_field_plus(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Magnitude bound for the reaction term: death sign flipped to +."""
    u = np.asarray(values, dtype=float)
    K = u.shape[0] - 2
    s = params.fitness.values(K)
    mass = u.sum(axis=0)
    qp = params.rates.eval_plus(mass)
    qm = params.rates.eval_minus(mass)
    out = np.empty_like(u)
    sb = s.reshape((K + 1,) + (1,) * (u.ndim - 1))
    out[: K + 1] = qp * (1.0 - params.mu) * sb * u[: K + 1]
    out[1 : K + 2] += qp * params.mu * sb * u[: K + 1]
    out += qm * u
    return out


def reaction_field_star(
    values: np.ndarray, star_values: np.ndarray, params: ModelParams
) -> np.ndarray:
    """Tracer reaction term: rate arguments use the total mass, linear
    factors use the labelled densities (only labelled parents produce
    labelled offspring)."""
    u = np.asarray(values, dtype=float)
    w = np.asarray(star_values, dtype=float)
    if u.shape != w.shape:
        raise ValueError("labelled field must match the total field shape")
    K = u.shape[0] - 2
    s = params.fitness.values(K)
    mass = u.sum(axis=0)
    qp = params.rates.eval_plus(mass)
    qm = params.rates.eval_minus(mass)
    out = np.empty_like(w)
    sb = s.reshape((K + 1,) + (1,) * (u.ndim - 1))
    out[: K + 1] = qp * (1.0 - params.mu) * sb * w[: K + 1]
    out[1 : K + 2] += qp * params.mu * sb * w[: K + 1]
    out -= qm * w
    return out


def reaction_F(u: MassVector, params: ModelParams) -> MassVector:
    return MassVector(reaction_field(u.values, params), validate=False)


def reaction_F_plus(u: MassVector, params: ModelParams) -> MassVector:
    return MassVector(reaction_field_plus(u.values, params), validate=False)


def reaction_F_star(u: MassVector, u_star: MassVector, params: ModelParams) -> MassVector:
    return MassVector(
        reaction_field_star(u.values, u_star.values, params), validate=False
    )


class ReactionClass(enum.Enum):
    FISHER_KPP = "FisherKPP"
    MONOSTABLE_ONLY = "MonostableOnly"
    NOT_MONOSTABLE = "NotMonostable"


def classify_reaction(
    params: ModelParams,
    u_grid_n: int = DEFAULT_SIGN_GRID,
    fitness_check_K: int = 32,
    tol: float = 1e-12,
) -> ReactionClass:
    """Classify the reaction term as Fisher-KPP, monostable only, or neither.

    Monostability needs, on [0, 1]: q_plus >= q_minus, q_plus > 0,
    q_plus(1) = q_minus(1), q_plus'(1) < q_minus'(1), and positive growth
    at zero density after mutation loss, (1-mu)q_plus(0) - q_minus(0) > 0.
    The Fisher-KPP condition additionally requires the per-capita growth
    (1-mu)q_plus - q_minus to be maximal at zero density.  Endpoints are
    evaluated exactly; interior inequalities are checked on a grid of
    u_grid_n points (the rates are low-degree polynomials, so exact root
    isolation would buy nothing).
    """
    if not 0.0 < params.mu < 1.0:
        raise ValueError("classification requires mu in (0, 1)")
    rates = params.rates
    grid = np.linspace(0.0, 1.0, u_grid_n)
    qp = rates.eval_plus(grid)
    qm = rates.eval_minus(grid)

    cond_i = bool(np.all(qp - qm >= -tol))
    cond_ii = bool(np.all(qp > tol))
    cond_iii = math.isclose(rates.eval_plus(1.0), rates.eval_minus(1.0),
                            rel_tol=0.0, abs_tol=tol)
    dqp = _polyval(_polyder(rates.q_plus), 1.0)
    dqm = _polyval(_polyder(rates.q_minus), 1.0)
    cond_iv = dqp < dqm - tol
    growth0 = (1.0 - params.mu) * rates.eval_plus(0.0) - rates.eval_minus(0.0)
    cond_v = growth0 > tol

    if not (cond_i and cond_ii and cond_iii and cond_iv and cond_v):
        return ReactionClass.NOT_MONOSTABLE

    if not params.fitness.strictly_decreasing(fitness_check_K):
        raise InvalidFitness(
            "monostable verdict requires strictly decreasing fitness on the "
            f"first {fitness_check_K + 1} classes"
        )

    kpp = bool(np.all((1.0 - params.mu) * qp - qm <= growth0 + tol))
    return ReactionClass.FISHER_KPP if kpp else ReactionClass.MONOSTABLE_ONLY
