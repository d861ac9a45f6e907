"""Serialize, segment, resolve, and exchange research artifacts.

The package turns directory-tree artifacts (built indexes, caches, and
similar research outputs) into deterministic LZ4-compressed TAR files with
embedded metadata, splits them into checksummed segments for hosts with
file-size limits, resolves their (type, format) to registered handlers, and
moves them over hub-style HTTP hosts or one-time-code peer-to-peer relays.
"""

from .archive import ArchiveEntry, PackOptions, list_entries, pack, unpack
from .errors import ArtifactError, ExitStatus
from .hosts import (
    ArtifactRef,
    ReferenceHost,
    fetch,
    generate_readme,
    push,
    resume_download,
)
from .metadata import (
    ArtifactMetadata,
    Sniffer,
    parse_metadata,
    resolve_metadata,
    sniff_anserini,
    sniff_ciff,
    write_metadata,
)
from .p2p import Relay, TransferCode, generate_code, parse_code, receive, send
from .registry import (
    HandlerKey,
    HandlerRecord,
    Registry,
    SchemeRecord,
    load_registry,
)
from .segments import SegmentManifest, join, parse_manifest, split, verify, write_manifest

__version__ = "0.1.0"

__all__ = [
    "ArchiveEntry",
    "ArtifactError",
    "ArtifactMetadata",
    "ArtifactRef",
    "ExitStatus",
    "HandlerKey",
    "HandlerRecord",
    "PackOptions",
    "ReferenceHost",
    "Registry",
    "Relay",
    "SchemeRecord",
    "SegmentManifest",
    "Sniffer",
    "TransferCode",
    "fetch",
    "generate_code",
    "generate_readme",
    "join",
    "list_entries",
    "load_registry",
    "pack",
    "parse_code",
    "parse_manifest",
    "parse_metadata",
    "push",
    "receive",
    "resolve_metadata",
    "resume_download",
    "send",
    "sniff_anserini",
    "sniff_ciff",
    "split",
    "unpack",
    "verify",
    "write_manifest",
    "write_metadata",
]
