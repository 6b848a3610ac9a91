class GmisError(Exception):
    pass


class ParameterError(GmisError, ValueError):
    pass


class ShapeError(GmisError, ValueError):
    pass


class InvalidKernelError(GmisError):
    pass


class NotInCameronMartinError(GmisError, ValueError):
    pass


class InvalidComponentError(GmisError, ValueError):
    """A component violates ``1 + alpha_k h_k > 0`` or has non-finite entries."""


class InvalidProposalError(GmisError, ValueError):
    pass


class DegenerateClusterError(GmisError):
    """A cluster has zero sample variance in some retained mode."""


class ConfigError(GmisError, ValueError):
    pass
