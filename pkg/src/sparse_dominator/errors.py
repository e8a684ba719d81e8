"""Exception types shared across the package."""


class SparseDominatorError(Exception):
    """Base class for all package errors."""


class ResolutionFloorError(SparseDominatorError):
    """A cube cannot be subdivided at the finest supported lattice level."""


class MisalignmentError(SparseDominatorError):
    """A cube or set is not aligned with the cell lattice it is used on."""


class LevelMismatchError(SparseDominatorError):
    """Two objects live on lattices of different resolution."""


class NegativityError(SparseDominatorError):
    """A function that must be nonnegative has a negative cell."""


class NonPositiveWeightError(SparseDominatorError):
    """A weight has a cell value <= 0."""


class DiniDivergenceError(SparseDominatorError):
    """Partial Dini integrals of a modulus do not converge."""


class ConvergenceError(SparseDominatorError):
    """An iterative estimate failed to meet its stopping rule."""


class ScopeError(SparseDominatorError):
    """An evaluation point lies outside the cube a local operator is scoped to."""


class ScaleRangeError(SparseDominatorError):
    """A cube lies outside the scale range supported by the shifted grids."""


class PreconditionError(SparseDominatorError):
    """An operation was called with inputs violating its precondition."""


class EmptyWitnessError(SparseDominatorError):
    """A witness set of zero measure was supplied where positive measure is needed."""
