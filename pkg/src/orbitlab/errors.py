from __future__ import annotations


class OrbitlabError(Exception):
    #: Process exit status used by the command-line interface
    exit_code = 1


class ConfigError(OrbitlabError):
    exit_code = 2


class InadmissibleQError(ConfigError):
    pass


class ProfileWindowError(ConfigError):
    pass


class LinkingError(ConfigError):
    pass


class DegenerateSplittingError(ConfigError):
    pass


class NotPositiveDefiniteError(ConfigError):
    pass


class UndersampledError(ConfigError):
    pass


class ChartEscapeError(OrbitlabError):
    exit_code = 3


class SymplecticityError(ChartEscapeError):
    pass


class UnconvergedError(OrbitlabError):
    exit_code = 4


class StepUnderflowError(UnconvergedError):
    pass


class NewtonDivergenceError(UnconvergedError):
    pass


class CaptureError(UnconvergedError):
    pass


class VerificationError(OrbitlabError):
    exit_code = 5


class BoundsViolationError(VerificationError):
    pass


class RhoBandError(VerificationError):
    pass
