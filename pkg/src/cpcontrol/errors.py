"""Exception types raised across the package."""


class CPCError(Exception):
    """Base class for all errors raised by cpcontrol."""


class UnstableF(CPCError):
    """Lyapunov operator matrix has spectral radius >= 1; the cost is infinite."""


class NoConvergence(CPCError):
    """A fixed-point iteration hit its iteration cap."""


class DegenerateParameters(CPCError):
    """A design parameter that divides a dynamics entry is (numerically) zero."""


class Diverged(CPCError):
    """Simulated state norm exceeded the divergence threshold."""


class RankDeficient(CPCError):
    """System-identification regressor lacks full row rank."""


class NoStabilizer(CPCError):
    """No stabilizing gain could be constructed (the ARE failed)."""


class ConfigError(CPCError):
    """Invalid configuration value or unknown configuration key."""


class UnstableClosedLoop(CPCError):
    """The closed loop A - BK is not Schur stable."""


class NoStableAscentStep(CPCError):
    """The gain destabilizes the uncertainty-ball center."""


class RadiusInfinite(CPCError):
    """Conformal radius is +inf, the robust problem is vacuous."""


class Infeasible(CPCError):
    """H-infinity synthesis has no solution for any admissible gamma."""


class MeanSquareUnstable(CPCError):
    """No gain renders the multiplicative-noise system mean-square stable."""


class PhaseError(CPCError):
    """Failure inside one experiment phase; ``phase`` names it."""

    def __init__(self, phase, message):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase
