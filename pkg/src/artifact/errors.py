"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto a
stable set of process exit statuses without maintaining a parallel table.
"""

from __future__ import annotations

from enum import IntEnum


class ExitStatus(IntEnum):
    OK = 0
    FAILURE = 1
    USAGE = 2
    INTEGRITY = 3
    NOT_FOUND = 4
    AUTH = 5


class ArtifactError(Exception):
    """Base class for all errors raised by this package."""

    exit_code: int = ExitStatus.FAILURE


# --- archive ---------------------------------------------------------------

class InvalidEntryError(ArtifactError):
    """A tree member cannot be represented as an archive entry."""


class MetadataConflictError(ArtifactError):
    """Provided metadata disagrees with metadata embedded in the tree."""


class PathTraversalError(ArtifactError):
    """An archive entry would escape the extraction directory."""


class DecodeError(ArtifactError):
    """Compressed or framed input is corrupt or truncated."""


# --- metadata --------------------------------------------------------------

class MetadataParseError(ArtifactError):
    """Metadata bytes are not valid JSON."""


class MetadataSchemaError(ArtifactError):
    """Metadata JSON is missing a required field or has a bad value."""


class UnknownArtifactError(ArtifactError):
    """No embedded metadata and no sniffer matched."""

    exit_code = ExitStatus.NOT_FOUND


# --- segments --------------------------------------------------------------

class ManifestError(ArtifactError):
    """Segment manifest is malformed or violates its invariants."""


class ManifestMismatchError(ArtifactError):
    """Manifest disagrees with the segment set it accompanies."""


class IncompleteSegmentsError(ArtifactError):
    """A numbered segment is missing from the set."""


class IntegrityError(ArtifactError):
    """A checksum comparison failed."""

    exit_code = ExitStatus.INTEGRITY


# --- registry --------------------------------------------------------------

class HandlerConflictError(ArtifactError):
    """A handler is already registered for this (type, format) key."""


class NoHandlerError(ArtifactError):
    """No handler is registered for the requested (type, format) key."""

    exit_code = ExitStatus.NOT_FOUND


class UnknownSchemeError(ArtifactError):
    """A location uses a URL scheme with no registered resolver."""

    exit_code = ExitStatus.NOT_FOUND


# --- hosts -----------------------------------------------------------------

class NotFoundError(ArtifactError):
    """The remote location holds no artifact."""

    exit_code = ExitStatus.NOT_FOUND


class AuthError(ArtifactError):
    """The host refused the request's credentials."""

    exit_code = ExitStatus.AUTH


class ProtocolError(ArtifactError):
    """The peer violated the expected HTTP or relay protocol."""


class PartialUploadError(ArtifactError):
    """An upload was interrupted; some files reached the host."""

    def __init__(self, message: str, uploaded: list[str], remaining: list[str]):
        super().__init__(message)
        self.uploaded = uploaded
        self.remaining = remaining


# --- p2p -------------------------------------------------------------------

class InvalidCodeError(ArtifactError):
    """A transfer code does not parse or uses unknown words."""

    exit_code = ExitStatus.USAGE


class CollisionError(ArtifactError):
    """The relay already has a live channel for this code hash."""


class NoSuchChannelError(ArtifactError):
    """The relay has no open channel for this code hash."""

    exit_code = ExitStatus.NOT_FOUND


class TransferAbortedError(ArtifactError):
    """The peer or relay went away before the transfer completed."""
