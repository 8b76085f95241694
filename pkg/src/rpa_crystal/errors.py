"""Exception hierarchy shared by all modules."""


class RPACrystalError(Exception):
    """Base class for every error raised by the package."""


class InvalidLattice(RPACrystalError):
    pass


class NumericalFailure(RPACrystalError):
    pass


class MetallicSystem(RPACrystalError):
    """The N-th and (N+1)-st bands overlap: no positive gap."""


class MaxIterations(NumericalFailure):
    pass


class MaxPicardIterations(NumericalFailure):
    pass


class DegenerateDenominator(NumericalFailure):
    pass


class FrequencyOutOfGap(RPACrystalError):
    """A frequency sample lies outside the open interval (-g, g)."""


# alias kept for callers that think in terms of a frequency band
FrequencyOutOfBand = FrequencyOutOfGap


class SingularScreening(NumericalFailure):
    pass


class SolveFailure(NumericalFailure):
    pass


class KViolation(NumericalFailure):
    """The density matrix left the admissible set -gamma0 <= Q <= 1 - gamma0."""


class GapClosed(RPACrystalError):
    pass


class NearSingular(NumericalFailure):
    pass


class ConfigError(RPACrystalError):
    pass
