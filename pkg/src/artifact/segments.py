"""Split serialization files into checksummed segments and join them back.

Hosts with per-file size limits receive the serialization file as numbered
pieces (``artifact.tar.lz4.0``, ``.1``, ...) accompanied by a JSON manifest
(``artifact.tar.lz4.json``) that records the segment count, sizes, and
SHA-256 digests of both the whole file and every segment. Segmented sets
must carry the manifest; unsegmented files may.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    IncompleteSegmentsError,
    IntegrityError,
    ManifestError,
    ManifestMismatchError,
)

# Hub-style hosts commonly cap individual files at 50 GB.
DEFAULT_MAX_SEGMENT_SIZE = 50 * 10**9

_HASH_CHUNK = 1 << 20

_MANIFEST_KEYS = {
    "checksum_sha256", "expected_segments", "segment_checksums",
    "segment_size", "total_size",
}


@dataclass(frozen=True)
class SegmentManifest:
    expected_segments: int
    total_size: int
    segment_size: int
    checksum_sha256: str
    segment_checksums: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.expected_segments < 1:
            raise ManifestError("expected_segments must be positive")
        if self.segment_size < 1:
            raise ManifestError("segment_size must be positive")
        if self.total_size > 0:
            want = math.ceil(self.total_size / self.segment_size)
            if self.expected_segments != want:
                raise ManifestError(
                    f"expected_segments={self.expected_segments} does not match "
                    f"ceil({self.total_size}/{self.segment_size})={want}")
        if len(self.segment_checksums) != self.expected_segments:
            raise ManifestError(
                f"{len(self.segment_checksums)} segment checksums for "
                f"{self.expected_segments} expected segments")

    def segment_length(self, index: int) -> int:
        if index < self.expected_segments - 1:
            return self.segment_size
        return self.total_size - self.segment_size * (self.expected_segments - 1)


def write_manifest(manifest: SegmentManifest) -> bytes:
    payload = {
        "checksum_sha256": manifest.checksum_sha256,
        "expected_segments": manifest.expected_segments,
        "segment_checksums": list(manifest.segment_checksums),
        "segment_size": manifest.segment_size,
        "total_size": manifest.total_size,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_manifest(data: bytes | str) -> SegmentManifest:
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a JSON object")
    missing = _MANIFEST_KEYS - raw.keys()
    if missing:
        raise ManifestError(f"manifest is missing fields: {', '.join(sorted(missing))}")
    try:
        return SegmentManifest(
            expected_segments=int(raw["expected_segments"]),
            total_size=int(raw["total_size"]),
            segment_size=int(raw["segment_size"]),
            checksum_sha256=str(raw["checksum_sha256"]),
            segment_checksums=tuple(str(c) for c in raw["segment_checksums"]),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"manifest field has wrong type: {exc}") from exc


def file_sha256(path: str | Path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(_HASH_CHUNK)
            if not chunk:
                break
            hasher.update(chunk)
    return hasher.hexdigest()


def segment_path(base: str | Path, index: int) -> Path:
    return Path(f"{base}.{index}")


def manifest_path(base: str | Path) -> Path:
    return Path(f"{base}.json")


def build_manifest_for_file(path: str | Path,
                            segment_size: int | None = None) -> SegmentManifest:
    """Manifest describing an unsegmented file (expected_segments == 1)."""
    total = Path(path).stat().st_size
    digest = file_sha256(path)
    return SegmentManifest(
        expected_segments=1,
        total_size=total,
        segment_size=segment_size if segment_size and segment_size >= total else max(total, 1),
        checksum_sha256=digest,
        segment_checksums=(digest,),
    )


def split(file: str | Path, max_segment_size: int = DEFAULT_MAX_SEGMENT_SIZE,
          base: str | Path | None = None) -> tuple[list[Path], SegmentManifest]:
    """Split file into <base>.0.. plus <base>.json; returns (paths, manifest)."""
    if max_segment_size < 1:
        raise ValueError("max_segment_size must be >= 1")
    file = Path(file)
    total = file.stat().st_size
    if total == 0:
        raise ValueError(f"refusing to split empty file: {file}")
    base = Path(base) if base is not None else file
    whole = hashlib.sha256()
    segment_digests: list[str] = []
    paths: list[Path] = []
    with open(file, "rb") as source:
        index = 0
        while True:
            remaining = max_segment_size
            seg_hash = hashlib.sha256()
            out_path = segment_path(base, index)
            wrote = 0
            with open(out_path, "wb") as out:
                while remaining > 0:
                    chunk = source.read(min(_HASH_CHUNK, remaining))
                    if not chunk:
                        break
                    out.write(chunk)
                    seg_hash.update(chunk)
                    whole.update(chunk)
                    wrote += len(chunk)
                    remaining -= len(chunk)
            if wrote == 0:
                out_path.unlink()
                break
            segment_digests.append(seg_hash.hexdigest())
            paths.append(out_path)
            index += 1
            if wrote < max_segment_size:
                break
    manifest = SegmentManifest(
        expected_segments=len(paths),
        total_size=total,
        segment_size=max_segment_size,
        checksum_sha256=whole.hexdigest(),
        segment_checksums=tuple(segment_digests),
    )
    manifest_path(base).write_bytes(write_manifest(manifest))
    return paths, manifest


_SEGMENT_SUFFIX = re.compile(r"\.(\d+)$")


def discover_segments(base: str | Path) -> list[Path]:
    """Contiguous segment files <base>.0..N-1; raises on gaps."""
    base = Path(base)
    found: dict[int, Path] = {}
    for candidate in base.parent.glob(base.name + ".*"):
        match = _SEGMENT_SUFFIX.search(candidate.name)
        if match and candidate.name == f"{base.name}.{int(match.group(1))}":
            found[int(match.group(1))] = candidate
    if not found:
        raise IncompleteSegmentsError(f"no segments found for {base}")
    top = max(found)
    missing = [str(i) for i in range(top + 1) if i not in found]
    if missing:
        raise IncompleteSegmentsError(
            f"segment set for {base} is missing index {', '.join(missing)}")
    return [found[i] for i in range(top + 1)]


def join(base: str | Path, manifest: SegmentManifest | None = None,
         out: str | Path | None = None) -> Path:
    """Concatenate <base>.0.. into out (default: base), verifying if possible."""
    base = Path(base)
    segments = discover_segments(base)
    if manifest is None and manifest_path(base).is_file():
        manifest = parse_manifest(manifest_path(base).read_bytes())
    if manifest is not None and manifest.expected_segments != len(segments):
        raise ManifestMismatchError(
            f"manifest expects {manifest.expected_segments} segments, "
            f"found {len(segments)}")
    out = Path(out) if out is not None else base
    whole = hashlib.sha256()
    with open(out, "wb") as sink:
        for index, seg in enumerate(segments):
            seg_hash = hashlib.sha256()
            with open(seg, "rb") as source:
                while True:
                    chunk = source.read(_HASH_CHUNK)
                    if not chunk:
                        break
                    seg_hash.update(chunk)
                    whole.update(chunk)
                    sink.write(chunk)
            if manifest is not None and seg_hash.hexdigest() != manifest.segment_checksums[index]:
                out.unlink(missing_ok=True)
                raise IntegrityError(f"segment {index} failed checksum verification")
    if manifest is not None and whole.hexdigest() != manifest.checksum_sha256:
        out.unlink(missing_ok=True)
        raise IntegrityError("joined file failed whole-file checksum verification")
    return out


@dataclass(frozen=True)
class Mismatch:
    kind: str  # "segment-checksum" | "segment-size" | "file-checksum" | "missing-segment" | "segment-count"
    index: int | None
    detail: str


@dataclass(frozen=True)
class VerificationReport:
    mismatches: tuple[Mismatch, ...]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def verify(target: str | Path, manifest: SegmentManifest) -> VerificationReport:
    """Compare a file or segment set against a manifest without writing."""
    target = Path(target)
    problems: list[Mismatch] = []
    first_segment = segment_path(target, 0)
    if first_segment.exists():
        try:
            segments = discover_segments(target)
        except IncompleteSegmentsError as exc:
            return VerificationReport((Mismatch("missing-segment", None, str(exc)),))
        if len(segments) != manifest.expected_segments:
            problems.append(Mismatch(
                "segment-count", None,
                f"found {len(segments)} segments, manifest expects "
                f"{manifest.expected_segments}"))
        whole = hashlib.sha256()
        for index, seg in enumerate(segments[:manifest.expected_segments]):
            size = seg.stat().st_size
            want_size = manifest.segment_length(index)
            if size != want_size:
                problems.append(Mismatch(
                    "segment-size", index,
                    f"segment {index} is {size} bytes, manifest expects {want_size}"))
            seg_hash = hashlib.sha256()
            with open(seg, "rb") as source:
                while True:
                    chunk = source.read(_HASH_CHUNK)
                    if not chunk:
                        break
                    seg_hash.update(chunk)
                    whole.update(chunk)
            if seg_hash.hexdigest() != manifest.segment_checksums[index]:
                problems.append(Mismatch(
                    "segment-checksum", index,
                    f"segment {index} digest {seg_hash.hexdigest()} != "
                    f"{manifest.segment_checksums[index]}"))
        if len(segments) == manifest.expected_segments and \
                whole.hexdigest() != manifest.checksum_sha256:
            problems.append(Mismatch(
                "file-checksum", None,
                f"joined digest {whole.hexdigest()} != {manifest.checksum_sha256}"))
    elif target.is_file():
        size = target.stat().st_size
        if size != manifest.total_size:
            problems.append(Mismatch(
                "segment-size", None,
                f"file is {size} bytes, manifest expects {manifest.total_size}"))
        digest = file_sha256(target)
        if digest != manifest.checksum_sha256:
            problems.append(Mismatch(
                "file-checksum", None,
                f"file digest {digest} != {manifest.checksum_sha256}"))
    else:
        problems.append(Mismatch("missing-segment", None,
                                 f"nothing to verify at {target}"))
    return VerificationReport(tuple(problems))
