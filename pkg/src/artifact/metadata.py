"""Artifact metadata (`pt_meta.json`) and fallback content sniffers.

The metadata file lives at the artifact root and declares two required
fields, ``type`` (broad category, e.g. ``sparse_index``) and ``format``
(specific encoding, e.g. ``terrier``), plus an optional ``package_hint``
naming software that can load the artifact. Unknown fields ride along in
``extra`` untouched.

When an artifact carries no metadata file, registered sniffers inspect its
root listing and may infer metadata. Embedded metadata always wins; sniffed
results are flagged with ``_inferred: true`` in ``extra`` so callers can
tell them apart.
"""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import MetadataParseError, MetadataSchemaError, UnknownArtifactError

METADATA_FILENAME = "pt_meta.json"

_RESERVED_KEYS = ("type", "format", "package_hint")


@dataclass(frozen=True)
class ArtifactMetadata:
    type: str
    format: str
    package_hint: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.type or not isinstance(self.type, str):
            raise MetadataSchemaError("metadata field \"type\" must be a non-empty string")
        if not self.format or not isinstance(self.format, str):
            raise MetadataSchemaError("metadata field \"format\" must be a non-empty string")
        for key in _RESERVED_KEYS:
            if key in self.extra:
                raise MetadataSchemaError(f"extra may not contain reserved key {key!r}")

    @property
    def inferred(self) -> bool:
        return bool(self.extra.get("_inferred"))

    def to_dict(self) -> dict:
        payload: dict = {"type": self.type, "format": self.format}
        if self.package_hint is not None:
            payload["package_hint"] = self.package_hint
        payload.update(self.extra)
        return payload


def parse_metadata(data: bytes | str) -> ArtifactMetadata:
    """Parse metadata bytes; unknown fields are captured in extra."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MetadataParseError(f"metadata is not UTF-8: {exc}") from exc
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MetadataParseError(f"metadata is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MetadataSchemaError("metadata must be a JSON object")
    for key in ("type", "format"):
        if key not in raw:
            raise MetadataSchemaError(f"metadata is missing required field \"{key}\"")
        if not isinstance(raw[key], str) or not raw[key]:
            raise MetadataSchemaError(f"metadata field \"{key}\" must be a non-empty string")
    hint = raw.get("package_hint")
    if hint is not None and not isinstance(hint, str):
        raise MetadataSchemaError("metadata field \"package_hint\" must be a string")
    extra = {k: v for k, v in raw.items() if k not in _RESERVED_KEYS}
    return ArtifactMetadata(raw["type"], raw["format"], hint, extra)


def write_metadata(meta: ArtifactMetadata) -> bytes:
    """Canonical encoding: UTF-8, keys sorted byte-wise, no extra whitespace."""
    return json.dumps(meta.to_dict(), sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


@dataclass(frozen=True)
class RootListing:
    """Names at the artifact root, as seen by sniffers."""

    files: tuple[str, ...]
    dirs: tuple[str, ...] = ()

    def has_file(self, pattern: str) -> bool:
        return any(fnmatch.fnmatchcase(name, pattern) for name in self.files)


@dataclass(frozen=True)
class Sniffer:
    id: str
    applies: Callable[[RootListing], Optional[ArtifactMetadata]]


def sniff_ciff(listing: RootListing) -> ArtifactMetadata | None:
    """Match a lone .ciff file at the root; ambiguous trees do not match."""
    hits = [name for name in listing.files if name.endswith(".ciff")]
    if len(hits) != 1:
        return None
    return ArtifactMetadata("sparse_index", "ciff", "pyterrier-ciff")


def sniff_anserini(listing: RootListing) -> ArtifactMetadata | None:
    """Match the Lucene marker pair (segments_* plus write.lock)."""
    if listing.has_file("segments_*") and "write.lock" in listing.files:
        return ArtifactMetadata("sparse_index", "anserini", "pyterrier-anserini")
    return None


DEFAULT_SNIFFERS: tuple[Sniffer, ...] = (
    Sniffer("ciff", sniff_ciff),
    Sniffer("anserini", sniff_anserini),
)


def _listing_for_tree(root: Path) -> RootListing:
    files = []
    dirs = []
    for child in root.iterdir():
        if child.is_dir():
            dirs.append(child.name)
        elif child.is_file():
            files.append(child.name)
    return RootListing(tuple(sorted(files)), tuple(sorted(dirs)))


def _listing_for_archive(file: Path) -> tuple[RootListing, bool]:
    from . import archive  # deferred: archive imports this module

    files = []
    dirs = []
    has_meta = False
    for entry in archive.list_entries(file):
        if "/" in entry.path:
            continue
        if entry.is_dir:
            dirs.append(entry.path)
        else:
            files.append(entry.path)
            if entry.path == METADATA_FILENAME:
                has_meta = True
    return RootListing(tuple(sorted(files)), tuple(sorted(dirs))), has_meta


def resolve_metadata(artifact: str | Path,
                     sniffers: Sequence[Sniffer] | None = None) -> ArtifactMetadata:
    """Metadata for a tree or serialization file; embedded always wins.

    Raises UnknownArtifactError when there is no embedded metadata and no
    sniffer matches.
    """
    if sniffers is None:
        sniffers = DEFAULT_SNIFFERS
    path = Path(artifact)
    if path.is_dir():
        meta_path = path / METADATA_FILENAME
        if meta_path.is_file():
            return parse_metadata(meta_path.read_bytes())
        listing = _listing_for_tree(path)
    else:
        from . import archive

        listing, has_meta = _listing_for_archive(path)
        if has_meta:
            return parse_metadata(archive.read_entry(path, METADATA_FILENAME))
    for sniffer in sniffers:
        meta = sniffer.applies(listing)
        if meta is not None:
            return replace(meta, extra={**meta.extra, "_inferred": True})
    raise UnknownArtifactError(
        "artifact has no embedded pt_meta.json and no sniffer matched; "
        "declare its type/format or add metadata to the artifact root")
