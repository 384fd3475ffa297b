"""Exception and warning types shared across the pipeline."""


class ProvsightError(Exception):
    """Base class for all provsight errors."""


# --- log ingestion ---

class MalformedRecord(ProvsightError):
    """Line is not syntactically valid JSON (or not a JSON object)."""


class SchemaViolation(ProvsightError):
    """Record parses but a field is missing, ill-typed, or out of range."""


class UnknownEventType(ProvsightError):
    """Record names an event type outside the four supported ones."""


class IoFailure(ProvsightError):
    """Underlying file could not be read or written."""


class DuplicateEventId(ProvsightError):
    """Two records in one log share an event_id."""


# --- command-line embedding ---

class NotAProcessNode(ProvsightError):
    """Command-line composition requested for a non-process node."""


class TableMiss(ProvsightError):
    """Table encoder has no entry for the requested text."""


class DegenerateCorpus(ProvsightError):
    """Autoencoder corpus has zero variance (reported as a warning)."""


# --- sequencing / encoding ---

class NotEnriched(ProvsightError):
    """Graph lacks security features or command embeddings."""


class EmptyTrainSet(ProvsightError):
    """Codec fitting requires at least one training window."""


class CodecVersionMismatch(ProvsightError):
    """Data was encoded with a different codec than the model expects."""


# --- model ---

class DimensionMismatch(ProvsightError):
    """Input feature dimension does not match the model configuration."""


class NonFiniteLoss(ProvsightError):
    """Loss or a gradient went NaN/Inf; the training step is aborted."""


class CorruptCheckpoint(ProvsightError):
    """Checkpoint file is truncated or fails its integrity check."""


class ConfigMismatch(ProvsightError):
    """Checkpoint configuration conflicts with the requested one."""


class HeadOutOfRange(ProvsightError):
    """Requested attention head index exceeds the model's head count."""


# --- metrics ---

class DegenerateLabels(ProvsightError):
    """ROC analysis needs at least one positive and one negative label."""


# --- pipeline ---

class StageError(ProvsightError):
    """A pipeline stage failed; carries the stage name for CLI reporting."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# --- warnings ---

class BrokenLineageWarning(UserWarning):
    """An ancestor process is referenced but never defined in the log."""


class DegenerateCorpusWarning(UserWarning):
    """Autoencoder was trained on a zero-variance corpus."""


class TableMissWarning(UserWarning):
    """Table encoder missed; the built-in hash encoder was used instead."""
