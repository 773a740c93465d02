"""Initial condition descriptions for both the particle system and the PDE.

A profile assigns each mutation class a piecewise shape.  Shapes know their
pointwise value, their exact integral over an interval (used by the lattice
discretisation), and their supremum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ProfileUnbounded, TracerExceedsTotal


@dataclass(frozen=True)
class Constant:
    c: float

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.c)

    def integral(self, a: float, b: float) -> float:
        return self.c * (b - a)

    def sup(self) -> float:
        return self.c


@dataclass(frozen=True)
class Indicator:
    a: float
    b: float
    c: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), self.c, 0.0)

    def integral(self, a: float, b: float) -> float:
        lo, hi = max(a, self.a), min(b, self.b)
        return self.c * max(0.0, hi - lo)

    def sup(self) -> float:
        return self.c


@dataclass(frozen=True)
class GaussianBump:
    center: float
    width: float
    height: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.height * np.exp(-((x - self.center) ** 2) / (2.0 * self.width**2))

    def integral(self, a: float, b: float) -> float:
        s = self.width * math.sqrt(2.0)
        return float(
            self.height
            * self.width
            * math.sqrt(math.pi / 2.0)
            * (erf((b - self.center) / s) - erf((a - self.center) / s))
        )

    def sup(self) -> float:
        return self.height


Shape = Constant | Indicator | GaussianBump

_ZERO = Constant(0.0)


@dataclass(frozen=True)
class InitialProfile:
    """Per-class shapes f_k, k = 0..K, with an optional tracer profile.

    Shapes for classes beyond K are pooled into the overflow class by the
    lattice discretisation.  The tracer profile, when present, must be
    dominated by the total profile pointwise.
    """

    shapes: dict[int, Shape] = field(default_factory=dict)
    tracer_shapes: dict[int, Shape] | None = None

    def __post_init__(self):
        for k, sh in self.shapes.items():
            if k < 0:
                raise ValueError("mutation classes are nonnegative")
            if sh.sup() < 0.0:
                raise ValueError("profile heights must be nonnegative")

    def shape(self, k: int) -> Shape:
        return self.shapes.get(k, _ZERO)

    def tracer_shape(self, k: int) -> Shape:
        if self.tracer_shapes is None:
            return _ZERO
        return self.tracer_shapes.get(k, _ZERO)

    @property
    def max_class(self) -> int:
        ks = list(self.shapes)
        if self.tracer_shapes:
            ks += list(self.tracer_shapes)
        return max(ks, default=0)

    def sup_mass(self) -> float:
        """Supremum over x of the summed profile (shape sups are additive
        only as an upper bound; exact on nested/aligned supports, which is
        what the presets use)."""
        return sum(sh.sup() for sh in self.shapes.values())

    def values(self, x: np.ndarray, K: int, tracer: bool = False) -> np.ndarray:
        """Pointwise field of shape (K+2, len(x)); classes above K pooled
        into the overflow row."""
        x = np.asarray(x, dtype=float)
        out = np.zeros((K + 2, x.size))
        source = self.tracer_shapes or {} if tracer else self.shapes
        for k, sh in source.items():
            row = min(k, K + 1) if k > K else k
            out[row] += sh(x)
        return out

    def cell_counts(self, centers: np.ndarray, width: float, K: int,
                    density: float) -> np.ndarray:
        """Exact floor-discretised occupancies: floor(density * integral of
        f_k over each width-sized cell), classes above K pooled first."""
        counts = np.zeros((K + 2, centers.size), dtype=np.int64)
        pooled = np.zeros(centers.size)
        for k, sh in sorted(self.shapes.items()):
            ints = np.array(
                [sh.integral(c - width / 2.0, c + width / 2.0) for c in centers]
            )
            if k <= K:
                counts[k] = np.floor(density * ints).astype(np.int64)
            else:
                pooled += ints
        counts[K + 1] = np.floor(density * pooled).astype(np.int64)
        return counts

    def check_tracer_dominated(self, x: np.ndarray, K: int):
        if self.tracer_shapes is None:
            return
        tot = self.values(x, K)
        lab = self.values(x, K, tracer=True)
        if np.any(lab > tot + 1e-12):
            raise TracerExceedsTotal(
                "tracer profile exceeds the total profile at some node"
            )

    def check_bounded(self, bound: float):
        if self.sup_mass() > bound:
            raise ProfileUnbounded(
                f"profile supremum {self.sup_mass():g} exceeds bound {bound:g}"
            )


def scaled_by_alpha(
    alpha: np.ndarray,
    total_mass: float,
    a: float | None = None,
    b: float | None = None,
) -> dict[int, Shape]:
    """Shapes for a profile carrying `total_mass` split across classes in
    proportion to the equilibrium weights alpha; constant in space, or an
    indicator on [a, b] when a window is given."""
    weights = np.asarray(alpha, dtype=float)
    weights = weights / weights.sum()
    shapes: dict[int, Shape] = {}
    for k, wk in enumerate(weights):
        h = total_mass * wk
        if h == 0.0:
            continue
        if a is None:
            shapes[k] = Constant(h)
        else:
            shapes[k] = Indicator(a, b, h)
    return shapes


def label_mutants(profile: InitialProfile) -> InitialProfile:
    """Tracer setup that labels every class k >= 1 of the given profile."""
    tracer = {k: sh for k, sh in profile.shapes.items() if k >= 1}
    return InitialProfile(shapes=dict(profile.shapes), tracer_shapes=tracer)
