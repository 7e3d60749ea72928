"""Exception hierarchy for the rsirl package."""


class RsirlError(Exception):
    """Base class for all rsirl errors."""


# -- geometry ---------------------------------------------------------------


class DegenerateDirection(RsirlError):
    """Cost vector is proportional to the all-ones vector; the pruning
    direction on the simplex is undefined."""


class EmptyEnvelope(RsirlError):
    """A half-space cut left no feasible point of the envelope."""


class TooManyConstraints(RsirlError):
    """Combinatorial vertex enumeration would exceed the subset cap."""


class DegenerateHull(RsirlError):
    """Sampled points were affinely dependent; no full-dimensional hull."""


# -- solvers ----------------------------------------------------------------


class Infeasible(RsirlError):
    """Linear program has no feasible point."""


class Unbounded(RsirlError):
    """Linear program objective is unbounded above on the feasible set."""


class NotConverged(RsirlError):
    """Minimax restarts disagree beyond tolerance; likely ill-conditioning."""


# -- inference --------------------------------------------------------------


class InfeasibleKkt(RsirlError):
    """Stationarity LP for a demonstration is infeasible; the demonstration
    is inconsistent with the current envelope under tolerances."""


# -- active sampling --------------------------------------------------------


class AllDegenerate(RsirlError):
    """Every sampled cost vector was proportional to all-ones; no predicted
    refinement direction is available."""


# -- multistep --------------------------------------------------------------


class GridTooLarge(RsirlError):
    """Stage enumeration would exceed the configured node cap."""


class IllConditioned(RsirlError):
    """Feature weights are not identifiable from the given demonstrations."""


class TooFewSequences(RsirlError):
    """Fewer react sequences than requested cluster count."""
