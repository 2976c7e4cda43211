class ByzGossipError(Exception):
    """Base class for all library errors."""


class InvalidSpec(ByzGossipError, ValueError):
    """A topology, mixing, aggregator, attack, objective or run spec is malformed."""


class DisconnectedRegularSubgraph(ByzGossipError):
    """The subgraph induced by the regular nodes is not connected."""


class DegreeExceedsBound(ByzGossipError, ValueError):
    """Some node has more neighbors than the public degree bound allows."""


class InfeasibleWeights(InvalidSpec):
    """No non-negative weighting reaches the requested spectral gap / Byzantine weight."""


class DimensionMismatch(ByzGossipError, ValueError):
    pass


class EmptyAfterTrim(ByzGossipError, ValueError):
    pass


class ZeroDelta(ByzGossipError, ValueError):
    """The oracle clipping radius is undefined when a node has no Byzantine weight."""


class NoByzantineNeighbor(ByzGossipError, ValueError):
    pass


class NoRegularNeighbor(ByzGossipError, ValueError):
    pass


class DegenerateQuantile(ByzGossipError, ValueError):
    pass


class UnsupportedAttackForMode(ByzGossipError, ValueError):
    pass


class NonFiniteState(ByzGossipError, ArithmeticError):
    """A regular model or momentum became NaN/Inf; carries the records gathered so far."""

    def __init__(self, message, records=None, round=None):
        super().__init__(message)
        self.records = list(records or [])
        self.round = round
