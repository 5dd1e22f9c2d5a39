"""Exception types shared across percolab."""


class UsageError(ValueError):
    """Invalid argument or incompatible inputs."""


class ResourceLimitError(RuntimeError):
    """A requested object exceeds a configured size limit."""


class BracketError(RuntimeError):
    """A threshold search could not bracket its target level."""


class InvarianceError(ValueError):
    """A transport function is not invariant under the listed automorphisms."""

    def __init__(self, message, automorphism=None, u=None, v=None):
        super().__init__(message)
        self.automorphism = automorphism
        self.u = u
        self.v = v


class RegimeError(ValueError):
    """Configuration is outside the regime an operation is defined for."""
