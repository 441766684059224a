"""Exception hierarchy shared by all tropdyn modules."""


class TropdynError(Exception):
    """Base class for every error raised by this package."""


class InputError(TropdynError, ValueError):
    """Malformed or out-of-contract input."""


class DomainError(InputError):
    """Argument outside the mathematical domain (e.g. nonpositive z)."""


class RangeOverflowError(TropdynError, OverflowError):
    """Linear-domain arithmetic left the representable float range."""


class ContractError(TropdynError):
    """Operation called on an object that does not satisfy its precondition."""


class ResourceError(TropdynError):
    """Requested brute-force enumeration is too large."""


class NumericalError(TropdynError):
    """An iterative method failed to meet its convergence guarantee."""


class InvariantError(TropdynError):
    """A computed object violates one of its declared invariants."""
