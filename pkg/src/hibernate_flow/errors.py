"""Exception hierarchy shared by all hibernate-flow modules."""


class HibernateFlowError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(HibernateFlowError):
    """Malformed scenario document or workflow fragment."""


class ValidationError(HibernateFlowError):
    """A structural invariant of a workflow or scenario is violated."""


class InvalidScenario(HibernateFlowError):
    """Scenario is well-formed but semantically unusable."""


class UnknownPartition(HibernateFlowError):
    """Partition id is not part of the store schema."""


class UnknownDimension(HibernateFlowError):
    """Dimension id has not been registered with the store."""


class DuplicateRecord(HibernateFlowError):
    """Seeding would overwrite an existing record."""


class NotFound(HibernateFlowError, KeyError):
    """No record at the requested partition/table/key."""

    def __str__(self):  # KeyError quotes its args; keep plain messages
        return Exception.__str__(self)


class IndexOutOfRange(HibernateFlowError, IndexError):
    """Activity index outside the workflow."""


class InvalidState(HibernateFlowError):
    """Partition is not in the mode/location the operation requires."""


class KeyMismatch(HibernateFlowError):
    """Decryption attempted with a key id other than the one in effect."""


class NotOwner(HibernateFlowError):
    """Overlay write attempted by an activity that does not own the cache."""


class ActivityStillRunning(HibernateFlowError):
    """Overlay flush attempted before the owning activity completed."""


class ConflictDetected(HibernateFlowError):
    """Same partition held by two dimensions; indicates an engine bug."""


class ScheduleOutOfRange(HibernateFlowError):
    """Injected event positioned outside the workflow's step grid."""


class ActivityFailure(HibernateFlowError):
    """A primitive operation failed; the run is aborted with a diagnostic."""
