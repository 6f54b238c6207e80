"""Exception and warning classes raised across probekit."""


class ProbeKitError(Exception):
    """Base class for all probekit errors."""


class DegenerateRatesError(ProbeKitError):
    """The fast and slow decay rates coincide; amplitudes are undefined."""


class StepSizeUnderflowError(ProbeKitError):
    """The ODE integrator could not reach the requested tolerance."""


class InsufficientSignalError(ProbeKitError):
    """Histogram does not carry enough signal above background to fit."""


class InvalidAsymmetryError(ProbeKitError):
    """Amplitude asymmetry admits no real solution for the spin-flip rate."""


class NegativeRadiativeError(ProbeKitError):
    """Inversion produced a non-positive radiative rate."""


class NegativeNonradiativeError(ProbeKitError):
    """Non-radiative rate is significantly below zero."""


class BootstrapDegenerateError(ProbeKitError):
    """More than half of the bootstrap resamples failed extraction."""


class InvalidRateError(ProbeKitError, ValueError):
    """A rate that must be positive was not."""


class TooFewReferencesError(ProbeKitError):
    """Fewer than two usable reference records."""


class EmptyMapError(ProbeKitError):
    """No valid in-crystal records to put on the map."""


class FormatError(ProbeKitError):
    """Base class for file-format errors; carries the offending line number."""

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class MalformedHeaderError(FormatError):
    pass


class NonUniformBinsError(FormatError):
    pass


class NegativeCountError(FormatError):
    pass


class ConfigError(FormatError):
    pass


class UnwritablePathError(ProbeKitError):
    pass


class ParameterAtBoundWarning(UserWarning):
    """A fitted rate collapsed onto the positivity floor."""


class OverlayRangeWarning(UserWarning):
    """A map point lies outside the theory overlay's frequency span."""


class InvalidRecordWarning(UserWarning):
    """A record was dropped from an aggregate because its extraction is invalid."""
