"""Exception hierarchy shared by all gridfault modules."""


class GridFaultError(Exception):
    """Base class for domain errors raised by the library."""


class TopologyError(GridFaultError):
    """Closed-line graph is not a connected tree, or a bus/line reference is invalid."""


class SingularLineError(GridFaultError):
    """A line has zero series impedance."""


class DomainError(GridFaultError, ValueError):
    """An argument lies outside its admissible range."""


class ObservabilityError(GridFaultError):
    """A measurement model is rank deficient."""

    def __init__(self, message, tag=None, violations=()):
        super().__init__(message)
        self.tag = tag
        self.violations = list(violations)


class ConstraintConflictError(GridFaultError):
    """Fixed assignments of a placement problem contradict each other."""


class InfeasibleError(GridFaultError):
    """A placement problem admits no feasible monitoring vector."""


class CalibrationError(GridFaultError):
    """Not enough no-fault frames to calibrate thresholds."""


class StalenessError(GridFaultError):
    """A localization window is incomplete."""


class CharacterizationInconclusive(GridFaultError):
    """Virtual-bus currents and voltages give no usable phase signature."""
