"""Deterministic serialization files: LZ4-compressed TAR trees.

A serialization file is a POSIX ustar stream (PAX extended headers only for
paths that do not fit ustar limits) wrapped in an LZ4 frame. With default
options the output is a pure function of the tree's relative paths, file
contents, embedded metadata, and compression level:

- entries are sorted by the byte-lexicographic order of their UTF-8 entry
  names (directories compare with their trailing ``/``)
- headers are normalized: mtime=0, uid=gid=0, empty uname/gname, and mode
  0644 for files / 0755 for directories

Symbolic links, hard links, and special files are rejected at pack time;
unpack refuses any entry whose path would escape the destination.
"""

from __future__ import annotations

import io
import os
import stat
import tarfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from . import lz4f
from .errors import (
    DecodeError,
    InvalidEntryError,
    MetadataConflictError,
    PathTraversalError,
)
from .metadata import ArtifactMetadata, METADATA_FILENAME, parse_metadata, write_metadata

REGULAR_FILE = "regular-file"
DIRECTORY = "directory"

DEFAULT_ARCHIVE_NAME = "artifact.tar.lz4"

FILE_MODE = 0o644
DIR_MODE = 0o755


@dataclass(frozen=True)
class ArchiveEntry:
    """One normalized member of a serialization file."""

    path: str
    kind: str
    mode: int
    size: int
    mtime: int = 0

    @property
    def is_dir(self) -> bool:
        return self.kind == DIRECTORY

    @property
    def name(self) -> str:
        """Entry name as stored in the TAR stream (directories keep a slash)."""
        return self.path + "/" if self.is_dir else self.path


@dataclass(frozen=True)
class PackOptions:
    normalize_attributes: bool = True
    sort_entries: bool = True
    compression_level: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.compression_level <= 12:
            raise ValueError("compression_level must be in 1..12")


def _validate_relpath(rel: str) -> str:
    if not rel:
        raise InvalidEntryError("empty entry path")
    try:
        rel.encode("utf-8")
    except UnicodeEncodeError:
        raise InvalidEntryError(f"entry name is not valid UTF-8: {rel!r}") from None
    parts = rel.split("/")
    if any(part in ("", ".", "..") for part in parts):
        raise InvalidEntryError(f"entry path has invalid component: {rel!r}")
    if rel.startswith("/"):
        raise InvalidEntryError(f"entry path is absolute: {rel!r}")
    return rel


@dataclass
class _Member:
    rel: str
    kind: str
    src: Path | None
    size: int
    st: os.stat_result | None = None
    data: bytes | None = None

    @property
    def tar_name(self) -> str:
        return self.rel + "/" if self.kind == DIRECTORY else self.rel


def _scan_tree(root: Path) -> list[_Member]:
    members: list[_Member] = []
    for dirpath, dirnames, filenames in os.walk(root):
        base = Path(dirpath)
        for name in dirnames:
            path = base / name
            if path.is_symlink():
                raise InvalidEntryError(f"symbolic links are not supported: {path}")
            rel = _validate_relpath(path.relative_to(root).as_posix())
            members.append(_Member(rel, DIRECTORY, path, 0, path.stat()))
        for name in filenames:
            path = base / name
            if path.is_symlink():
                raise InvalidEntryError(f"symbolic links are not supported: {path}")
            st = path.stat()
            if not stat.S_ISREG(st.st_mode):
                raise InvalidEntryError(f"special files are not supported: {path}")
            rel = _validate_relpath(path.relative_to(root).as_posix())
            members.append(_Member(rel, REGULAR_FILE, path, st.st_size, st))
    return members


def _metadata_member(tree_root: Path, metadata: ArtifactMetadata,
                     members: list[_Member]) -> None:
    """Fold provided metadata into the member list as a canonical entry."""
    blob = write_metadata(metadata)
    existing = tree_root / METADATA_FILENAME
    for member in members:
        if member.rel == METADATA_FILENAME:
            embedded = parse_metadata(existing.read_bytes())
            if embedded != metadata:
                raise MetadataConflictError(
                    f"tree already embeds {METADATA_FILENAME} with different contents")
            member.src = None
            member.data = blob
            member.size = len(blob)
            return
    members.append(_Member(METADATA_FILENAME, REGULAR_FILE, None, len(blob), data=blob))


def pack(tree_root: str | Path, dest: str | Path, *,
         metadata: ArtifactMetadata | None = None,
         options: PackOptions | None = None) -> Path:
    """Pack a directory tree into a serialization file at dest."""
    options = options or PackOptions()
    root = Path(tree_root)
    if not root.is_dir():
        raise InvalidEntryError(f"not a directory: {root}")
    members = _scan_tree(root)
    if metadata is not None:
        _metadata_member(root, metadata, members)
    if options.sort_entries:
        members.sort(key=lambda m: m.tar_name.encode("utf-8"))
    dest = Path(dest)
    with open(dest, "wb") as sink:
        with lz4f.FrameWriter(sink, level=options.compression_level) as frame:
            with tarfile.open(fileobj=frame, mode="w|", format=tarfile.PAX_FORMAT,
                              encoding="utf-8") as tar:
                for member in members:
                    info = _tarinfo(member, options)
                    if member.kind == DIRECTORY:
                        tar.addfile(info)
                    elif member.data is not None:
                        tar.addfile(info, io.BytesIO(member.data))
                    else:
                        with open(member.src, "rb") as source:  # type: ignore[arg-type]
                            tar.addfile(info, source)
    return dest


def _tarinfo(member: _Member, options: PackOptions) -> tarfile.TarInfo:
    info = tarfile.TarInfo(member.rel)
    info.type = tarfile.DIRTYPE if member.kind == DIRECTORY else tarfile.REGTYPE
    info.size = 0 if member.kind == DIRECTORY else member.size
    if options.normalize_attributes or member.st is None:
        info.mode = DIR_MODE if member.kind == DIRECTORY else FILE_MODE
        info.mtime = 0
        info.uid = info.gid = 0
        info.uname = info.gname = ""
    else:
        st = member.st
        info.mode = stat.S_IMODE(st.st_mode)
        info.mtime = int(st.st_mtime)
        info.uid = st.st_uid
        info.gid = st.st_gid
    return info


def _entry_from_tarinfo(info: tarfile.TarInfo) -> ArchiveEntry:
    name = info.name.rstrip("/")
    if info.isdir():
        return ArchiveEntry(name, DIRECTORY, info.mode, 0, int(info.mtime))
    return ArchiveEntry(name, REGULAR_FILE, info.mode, info.size, int(info.mtime))


def _iter_members(file: str | Path) -> Iterator[tuple[tarfile.TarFile, tarfile.TarInfo]]:
    with open(file, "rb") as handle:
        reader = lz4f.FrameReader(handle)
        try:
            tar = tarfile.open(fileobj=reader, mode="r|", encoding="utf-8")
        except tarfile.ReadError as exc:
            raise DecodeError(f"not a serialization file: {exc}") from exc
        with tar:
            while True:
                try:
                    info = tar.next()
                except (tarfile.ReadError, EOFError) as exc:
                    raise DecodeError(f"corrupt serialization file: {exc}") from exc
                if info is None:
                    return
                yield tar, info


def list_entries(file: str | Path) -> list[ArchiveEntry]:
    """Entries in archive order, without extracting anything to disk."""
    return [_entry_from_tarinfo(info) for _, info in _iter_members(file)]


def read_entry(file: str | Path, path: str) -> bytes:
    """Contents of a single regular-file entry."""
    for tar, info in _iter_members(file):
        if info.name.rstrip("/") == path and info.isreg():
            source = tar.extractfile(info)
            assert source is not None
            return source.read()
    raise KeyError(path)


def unpack(file: str | Path, dest: str | Path) -> list[ArchiveEntry]:
    """Extract a serialization file under dest; returns the entries written."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    dest_root = dest.resolve()
    written: list[ArchiveEntry] = []
    for tar, info in _iter_members(file):
        if not (info.isreg() or info.isdir()):
            raise InvalidEntryError(
                f"unsupported entry type for {info.name!r}; only files and "
                "directories are allowed")
        entry = _entry_from_tarinfo(info)
        rel = entry.path
        parts = rel.split("/")
        if rel.startswith("/") or any(part in ("", ".", "..") for part in parts):
            raise PathTraversalError(f"entry path escapes destination: {info.name!r}")
        target = dest_root.joinpath(*parts)
        parent = target.parent
        parent.mkdir(parents=True, exist_ok=True)
        if not parent.resolve().is_relative_to(dest_root):
            raise PathTraversalError(f"entry path escapes destination: {info.name!r}")
        if entry.is_dir:
            target.mkdir(exist_ok=True)
            os.chmod(target, entry.mode & 0o7777 or DIR_MODE)
        else:
            source = tar.extractfile(info)
            assert source is not None
            with open(target, "wb") as out:
                while True:
                    chunk = source.read(1 << 20)
                    if not chunk:
                        break
                    out.write(chunk)
            os.chmod(target, entry.mode & 0o7777 or FILE_MODE)
        written.append(entry)
    return written
