"""Exception and warning types shared across the package."""


class PspoolError(Exception):
    """Base class for all package errors."""


class DataError(PspoolError):
    """Input data is malformed or violates a contract (CLI exit code 2)."""


class ParseError(DataError):
    """Mesh file could not be parsed."""


class NonTriangleFace(DataError):
    """Mesh file contains a face that is not a triangle."""


class DegenerateMesh(DataError):
    """Mesh has zero spatial extent and cannot be canonicalized."""


class DisconnectedSeed(DataError):
    """A correspondence seed cannot reach any fine vertex (corrupt input)."""


class ZeroRow(DataError):
    """A pooling row has zero total weight."""


class OrphanRow(DataError):
    """A fine node has no coarse parent in the unpooling operator."""


class ShapeMismatch(PspoolError):
    """Operand shapes are incompatible."""


class EmptySelection(DataError):
    """Selection pooling would keep fewer than one node."""


class EmptyGraph(DataError):
    """An operation that needs at least one node got an empty graph."""


class TapeExhausted(PspoolError):
    """backward() was called on a tape that was already consumed."""


class OperatorMismatch(DataError):
    """Precomputed operators disagree with the graph's node counts."""


class MissingPrecompute(DataError):
    """A training run requires precompute outputs that do not exist."""


class MissingCheckpoint(DataError):
    """A checkpoint file required for evaluation/export does not exist."""


class DivergedLoss(PspoolError):
    """Training produced a non-finite loss (CLI exit code 3)."""


class CannotDecimateWarning(UserWarning):
    """Decimation ran out of legal collapses before reaching its target."""


class EmptyClassWarning(UserWarning):
    """A label fraction rounded a class to zero samples; one was kept."""
