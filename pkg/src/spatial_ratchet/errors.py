"""Exception types shared across the package."""


class SpatialRatchetError(Exception):
    """Base class for all package-specific errors."""


class InvalidFitness(SpatialRatchetError):
    """Fitness sequence violates a requirement of the requested operation."""


class DegenerateFitness(SpatialRatchetError):
    """A fitness value makes a closed-form expression singular."""


class ProfileUnbounded(SpatialRatchetError):
    """Initial profile exceeds the configured supremum bound."""


class EmptySystem(SpatialRatchetError):
    """Total event rate is zero; the particle system is absorbed."""


class BlowUp(SpatialRatchetError):
    """A solver state left the admissible range (mis-scaled rates)."""


class TracerExceedsTotal(SpatialRatchetError):
    """Tracer initial profile is not dominated by the total profile."""


class NoContraction(SpatialRatchetError):
    """Fixed-point iteration failed to contract on the given horizon."""


class HistoryGap(SpatialRatchetError):
    """A queried time lies outside the stored trajectory."""


class NotMonostable(SpatialRatchetError):
    """Operation requires a monostable reaction term."""


class NoRoot(SpatialRatchetError):
    """No sign change found in the search bracket."""


class NegativeArgument(SpatialRatchetError):
    """Square-root argument of a speed formula is negative."""


class LevelNotCrossed(SpatialRatchetError):
    """Density field never reaches the requested level."""


class NoQualifyingNodes(SpatialRatchetError):
    """No grid node satisfies the requested floor condition."""


class WindowTooSmall(SpatialRatchetError):
    """Particles reached the protective margin of the lattice window."""


class ConfigInvalid(SpatialRatchetError):
    """Run configuration failed validation; message carries field context."""


class IoFailure(SpatialRatchetError):
    """File output could not be written."""
