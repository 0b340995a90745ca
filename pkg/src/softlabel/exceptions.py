"""Exception hierarchy shared by all softlabel modules."""


class SoftLabelError(Exception):
    """Base class for every error raised by softlabel."""


class SimplexError(SoftLabelError, ValueError):
    """A vector is not a valid distribution, or a class index is out of range."""


class InfeasibleLambdaError(SimplexError):
    """The affine combination would leave the probability simplex.

    Attributes
    ----------
    lam : float
        The rejected mixing coefficient.
    class_index : int
        The class whose coordinate would become negative.
    value : float
        The offending coordinate value.
    """

    def __init__(self, lam, class_index, value):
        self.lam = lam
        self.class_index = class_index
        self.value = value
        super().__init__(
            f"lambda={lam!r} is infeasible: class {class_index} would get mass {value!r}"
        )


class UndefinedRestrictionError(SimplexError):
    """Renormalising after excluding a class that holds all of the mass."""


class DegenerateSupervisionError(SoftLabelError, ValueError):
    """The additional supervision is already the point mass on the hard class."""


class MissingDistributionError(SoftLabelError, ValueError):
    """An instance lacks a distribution (p_star, p_a, p_lambda) that the operation needs."""


class TrainingDivergedError(SoftLabelError, ArithmeticError):
    """Training produced a non-finite objective."""

    def __init__(self, epoch, value):
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite training objective {value!r} at epoch {epoch}")


class ConfigError(SoftLabelError, ValueError):
    """A configuration file or flag is malformed."""
