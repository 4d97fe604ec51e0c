"""Exception types shared across the physagent package."""


class PhysAgentError(Exception):
    """Base class for all package-specific errors."""


class LimitViolation(PhysAgentError):
    """A joint value or gripper aperture lies outside its configured limits."""


class Unreachable(PhysAgentError):
    """An IK target lies beyond the arm's maximum reach."""


class NoConvergence(PhysAgentError):
    """Iterative IK failed to reach the target within the iteration budget."""


class UnknownObject(PhysAgentError):
    """A referenced object id does not exist in the scene."""


class UnknownTask(PhysAgentError):
    """The instruction does not match any known task template."""


class EmptyDataset(PhysAgentError):
    """A fit was requested on an empty (or too small) dataset."""


class UnfittedModel(PhysAgentError):
    """Prediction was requested from a model that has not been fitted."""


class DimensionMismatch(PhysAgentError):
    """Input feature dimensionality does not match the fitted model."""


class DegenerateTarget(PhysAgentError):
    """Regression target carries no variance (reported, never raised by fit)."""


class ParseError(PhysAgentError):
    """A remote reply could not be parsed into a known verdict."""


class UnbalancedGroups(PhysAgentError):
    """One-way ANOVA requires equal group sizes."""


class RemoteTimeout(PhysAgentError):
    """A remote endpoint did not answer within the deadline (after retries)."""


class MalformedResponse(PhysAgentError):
    """A remote reply violated the wire schema."""


class ServiceError(PhysAgentError):
    """A remote endpoint answered with a non-2xx status."""


class ConfigError(PhysAgentError):
    """A configuration file is missing, unreadable, or invalid."""
