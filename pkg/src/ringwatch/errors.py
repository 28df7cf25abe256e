"""Exception types shared across the package."""


class RingwatchError(Exception):
    """Base class for all ringwatch errors."""


# --- session documents -------------------------------------------------

class MalformedDocument(RingwatchError):
    """Session document is syntactically invalid or missing required fields."""


class NegativeTimestamp(RingwatchError):
    """An event carries a negative timestamp."""


class UnknownEventKind(RingwatchError):
    """An event kind is not part of the v1 schema."""


# --- features / statistics ---------------------------------------------

class EmptyCorpus(RingwatchError):
    """No usable sessions available to build corpus-level statistics."""


class InsufficientKeystrokeData(RingwatchError):
    """Session fails the keystroke validation policy."""


class InsufficientMouseData(RingwatchError):
    """Session fails the mouse validation policy."""


class DimensionMismatch(RingwatchError):
    """Vector dimensions do not agree."""


class TooFewSamples(RingwatchError):
    """Not enough samples for the requested statistic."""


class InsufficientOverlap(RingwatchError):
    """Two sessions share too few digraphs to compare."""


# --- embedding network --------------------------------------------------

class NonFiniteInput(RingwatchError):
    """Input vector contains NaN or infinity."""


class BatchTooSmall(RingwatchError):
    """Contrastive loss needs at least two users per batch."""


class InsufficientUsers(RingwatchError):
    """Not enough users with two or more usable sessions."""


class DivergedLoss(RingwatchError):
    """Training produced a non-finite loss."""


# --- model file ---------------------------------------------------------

class BadMagic(RingwatchError):
    """Model file does not start with the expected magic bytes."""


class VersionMismatch(RingwatchError):
    """Model file format version is not supported."""


class TruncatedFile(RingwatchError):
    """Model file ends before all declared payload was read."""


class ShapeMismatch(RingwatchError):
    """Stored layer shapes do not chain into a valid network."""


# --- pair sampling -------------------------------------------------------

class TooFewUsers(RingwatchError):
    """Corpus has too few users to split."""


class NoEligibleUsers(RingwatchError):
    """No user has enough usable sessions to form a positive pair."""


class NoEligiblePairs(RingwatchError):
    """No cross-user session pair satisfies the negative-pair constraint."""


# --- evaluation ----------------------------------------------------------

class EmptySide(RingwatchError):
    """Positive or negative score list is empty."""


class EmptyNegatives(RingwatchError):
    """Threshold calibration received no negative scores."""


class NoNegativePairs(RingwatchError):
    """Fairness audit received no negative pairs."""


# --- synthetic generator ---------------------------------------------------

class ConfigInfeasible(RingwatchError):
    """Generator configuration cannot be satisfied."""


# --- detection service ------------------------------------------------------

class DuplicateSessionId(RingwatchError):
    """A session with this id is already enrolled."""


class ModelNotLoaded(RingwatchError):
    """Service has no scoring model configured."""


class UnusableSession(RingwatchError):
    """Session lacks the data the loaded model needs; metadata-only entry."""


class UnknownSession(RingwatchError):
    """No gallery entry exists for this session id."""


class UnknownFlag(RingwatchError):
    """No flag exists for this session id."""


class AlreadyReviewed(RingwatchError):
    """Flag has already received a verdict."""


# --- pipeline ----------------------------------------------------------------

class ConfigError(RingwatchError):
    """Stage configuration or stage inputs are invalid (exit code 2)."""


class StageFailure(RingwatchError):
    """Stage failed at runtime (exit code 1)."""
