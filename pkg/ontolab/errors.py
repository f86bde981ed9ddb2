"""Exception hierarchy shared by every ontolab module."""


class OntolabError(Exception):
    """Base class for all errors raised by ontolab."""


# ---------------------------------------------------------------------
# dist_core
# ---------------------------------------------------------------------


class NotNormalized(OntolabError, ValueError):
    """A distribution (or kernel row) does not sum to one."""


class NegativeEntry(OntolabError, ValueError):
    """A probability entry is negative."""


class UnknownVariable(OntolabError, KeyError):
    """A variable name is not part of the scenario."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable.
        return str(self.args[0]) if self.args else ""


class InvalidAssignment(OntolabError, ValueError):
    """An assignment is partial, duplicated or out of its alphabet."""


class AliasViolation(OntolabError, ValueError):
    """An aliased variable carries mass where it differs from its target."""


class ZeroProbabilityEvent(OntolabError, ValueError):
    """Conditioning on an event of probability zero."""


class CyclicFactorization(OntolabError, ValueError):
    """A factor conditions on a variable no earlier factor produced."""


class MissingVariable(OntolabError, ValueError):
    """A scenario variable is not produced by any factor."""


class DuplicateTarget(OntolabError, ValueError):
    """A variable is produced by more than one factor."""


class CapExceeded(OntolabError, ValueError):
    """The dense product alphabet would exceed the table cap."""


class InvalidScenario(OntolabError, ValueError):
    """A scenario declares inconsistent variables or aliases."""


# ---------------------------------------------------------------------
# independence
# ---------------------------------------------------------------------


class InvalidQuery(OntolabError, ValueError):
    """A conditional-independence query is empty or overlapping."""


# ---------------------------------------------------------------------
# model_gallery
# ---------------------------------------------------------------------


class NotNormalizedState(OntolabError, ValueError):
    """A two-qubit state vector does not have unit norm."""


class NotUnitSetting(OntolabError, ValueError):
    """A Bloch measurement direction does not have unit length."""


class ShapeMismatch(OntolabError, ValueError):
    """A kernel does not have the shape an operation requires."""


class InconsistentSpec(OntolabError, ValueError):
    """An ontic model specification contradicts itself or its constructor."""


class InvalidProbability(OntolabError, ValueError):
    """A scalar probability lies outside [0, 1]."""


# ---------------------------------------------------------------------
# theorem_lab
# ---------------------------------------------------------------------


class InvalidBudget(OntolabError, ValueError):
    """A search budget or penalty weight is not usable."""


class PremiseNotCertified(OntolabError, RuntimeError):
    """A model fed to the implication sweep failed a premise check."""


# ---------------------------------------------------------------------
# cli_reporter
# ---------------------------------------------------------------------


class DocumentSyntaxError(OntolabError, ValueError):
    """A scenario document is not well-formed UTF-8 JSON."""


class SchemaError(OntolabError, ValueError):
    """A scenario document does not match the schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class DocumentReferenceError(OntolabError, ValueError):
    """A scenario document references an undeclared variable."""

    def __init__(self, name: str, path: str = ""):
        where = f" at {path}" if path else ""
        super().__init__(f"undeclared variable {name!r}{where}")
        self.name = name
        self.path = path
