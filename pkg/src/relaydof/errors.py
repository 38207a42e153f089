"""Exception types raised by the simulation modules."""


class DegenerateSingularValues(ValueError):
    """Two singular values coincide within the tie tolerance."""


class NoNontrivialSolution(RuntimeError):
    """The cancellation system has an empty null space."""


class DesiredGainDegenerate(RuntimeError):
    """Every sampled null vector annihilated a desired stream."""


class SingularEffectiveChannel(RuntimeError):
    """A ratio map needed by the beam construction could not be formed."""


class RankDeficient(ValueError):
    """The stacked receive basis does not have full column rank."""


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""
