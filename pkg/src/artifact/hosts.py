"""Artifact hosts: fetch, push, README generation, and a reference server.

A hosted artifact is a repository path holding ``artifact.tar.lz4`` (or its
numbered segments plus the ``artifact.tar.lz4.json`` manifest) and a
generated ``README.md``. The client side downloads with HTTP range resume,
verifies manifest checksums, unpacks into a content-addressed local cache,
and resolves metadata; the push side packs, splits oversized files, and
uploads over plain PUT with an optional bearer token.

The reference server stands in for hub-style hosts: GET with byte-range
support, JSON directory listings, PUT uploads guarded by a token and a
maximum file size, and an in-memory request log that tests can interrogate.
"""

from __future__ import annotations

import fcntl
import hashlib
import hmac
import json
import logging
import os
import re
import shutil
import tempfile
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import urlsplit

from . import archive, segments
from .errors import (
    ArtifactError,
    AuthError,
    IntegrityError,
    NotFoundError,
    PartialUploadError,
    ProtocolError,
)
from .metadata import (
    ArtifactMetadata,
    METADATA_FILENAME,
    Sniffer,
    parse_metadata,
    resolve_metadata,
    write_metadata,
)

logger = logging.getLogger(__name__)

ARCHIVE_NAME = archive.DEFAULT_ARCHIVE_NAME
README_NAME = "README.md"

ENV_CACHE_ROOT = "ARTIFACT_CACHE"
ENV_TOKEN = "ARTIFACT_TOKEN"

_DOWNLOAD_CHUNK = 1 << 18
_HTTP_TIMEOUT = 60.0


def default_cache_root() -> Path:
    env = os.environ.get(ENV_CACHE_ROOT)
    if env:
        return Path(env)
    xdg = os.environ.get("XDG_CACHE_HOME")
    base = Path(xdg) if xdg else Path.home() / ".cache"
    return base / "artifact"


@dataclass(frozen=True)
class ArtifactRef:
    location: str
    display_name: str

    @classmethod
    def from_location(cls, location: str) -> "ArtifactRef":
        if location.startswith(("http://", "https://")):
            path = urlsplit(location).path.strip("/")
            if path.endswith(ARCHIVE_NAME):
                path = path[:-len(ARCHIVE_NAME)].strip("/")
            return cls(location, path or location)
        return cls(location, Path(location).name or location)


@dataclass
class FetchProgress:
    total_bytes: int | None = None
    received_bytes: int = 0
    segments_done: int = 0
    segments_total: int = 0


@dataclass(frozen=True)
class CacheEntry:
    key: str
    path: Path

    @classmethod
    def for_location(cls, location: str, cache_root: Path) -> "CacheEntry":
        key = hashlib.sha256(location.encode("utf-8")).hexdigest()[:16]
        return cls(key, Path(cache_root) / key)

    @property
    def tree_path(self) -> Path:
        return self.path / "tree"

    @property
    def meta_path(self) -> Path:
        return self.path / METADATA_FILENAME

    @property
    def complete(self) -> bool:
        return (self.path / ".complete").is_file()

    def mark_complete(self) -> None:
        (self.path / ".complete").touch()


class _EntryLock:
    """Advisory per-entry lock so concurrent fetches of one ref serialize."""

    def __init__(self, entry: CacheEntry):
        self._path = entry.path.parent / f"{entry.key}.lock"
        self._handle = None

    def __enter__(self) -> "_EntryLock":
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = open(self._path, "w")
        fcntl.flock(self._handle, fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc) -> None:
        if self._handle is not None:
            fcntl.flock(self._handle, fcntl.LOCK_UN)
            self._handle.close()


# --------------------------------------------------------------------------
# HTTP client
# --------------------------------------------------------------------------

def _request(url: str, *, method: str = "GET", token: str | None = None,
             headers: dict[str, str] | None = None, data: bytes | None = None):
    req = urllib.request.Request(url, method=method, data=data)
    if token:
        req.add_header("Authorization", f"Bearer {token}")
    for name, value in (headers or {}).items():
        req.add_header(name, value)
    try:
        return urllib.request.urlopen(req, timeout=_HTTP_TIMEOUT)
    except urllib.error.HTTPError as exc:
        if exc.code in (401, 403):
            raise AuthError(f"{method} {url} refused: HTTP {exc.code}") from exc
        if exc.code == 404:
            raise NotFoundError(f"{method} {url}: HTTP 404") from exc
        if exc.code == 416:
            raise ProtocolError(f"{method} {url}: requested range not satisfiable") from exc
        raise ArtifactError(f"{method} {url} failed: HTTP {exc.code}") from exc
    except urllib.error.URLError as exc:
        raise ArtifactError(f"cannot reach {url}: {exc.reason}") from exc


def download(url: str, dest: str | Path, *, token: str | None = None,
             resume: bool = True, expected_sha256: str | None = None,
             progress: Callable[[int], None] | None = None) -> int:
    """Download url to dest, resuming from existing bytes when possible.

    Returns the number of bytes received over the wire. When the server
    ignores the range request the download restarts from zero.
    """
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    offset = dest.stat().st_size if resume and dest.exists() else 0
    headers = {"Range": f"bytes={offset}-"} if offset else {}
    received = 0
    with _request(url, token=token, headers=headers) as response:
        status = getattr(response, "status", 200)
        if offset and status != 206:
            logger.info("server ignored range request for %s; restarting", url)
            offset = 0
        mode = "ab" if offset else "wb"
        with open(dest, mode) as out:
            if not offset:
                out.truncate(0)
            while True:
                chunk = response.read(_DOWNLOAD_CHUNK)
                if not chunk:
                    break
                out.write(chunk)
                received += len(chunk)
                if progress is not None:
                    progress(len(chunk))
    if expected_sha256 is not None:
        actual = segments.file_sha256(dest)
        if actual != expected_sha256:
            dest.unlink(missing_ok=True)
            raise IntegrityError(
                f"download of {url} failed checksum: {actual} != {expected_sha256}")
    return received


def resume_download(url: str, dest: str | Path, *, token: str | None = None) -> int:
    """Fetch the remainder of url after the bytes already present at dest."""
    return download(url, dest, token=token, resume=True)


def _fetch_manifest(base_url: str, token: str | None) -> segments.SegmentManifest | None:
    try:
        with _request(base_url + ".json", token=token) as response:
            return segments.parse_manifest(response.read())
    except NotFoundError:
        return None


def _url_exists(url: str, token: str | None) -> bool:
    try:
        with _request(url, method="HEAD", token=token):
            return True
    except (NotFoundError, ArtifactError):
        return False


def _base_location(location: str) -> str:
    """Location of the serialization file for a repo URL or direct file URL."""
    if location.endswith(ARCHIVE_NAME):
        return location
    return location.rstrip("/") + "/" + ARCHIVE_NAME


def _obtain_remote(base_url: str, workdir: Path, *, verify: bool, workers: int,
                   token: str | None, progress: FetchProgress | None) -> Path:
    manifest = _fetch_manifest(base_url, token)
    target = workdir / ARCHIVE_NAME

    def count(received: int) -> None:
        if progress is not None:
            progress.received_bytes += received

    if manifest is None:
        try:
            download(base_url, target, token=token, progress=count)
        except NotFoundError:
            if _url_exists(base_url + ".0", token):
                raise NotFoundError(
                    f"{base_url} is segmented but its manifest "
                    f"{base_url}.json is missing; a manifest must accompany "
                    "segmented artifacts") from None
            raise NotFoundError(f"no artifact at {base_url}") from None
        if progress is not None:
            progress.total_bytes = target.stat().st_size
            progress.segments_total = progress.segments_done = 1
        return target
    if progress is not None:
        progress.total_bytes = manifest.total_size
        progress.segments_total = manifest.expected_segments
    if manifest.expected_segments == 1:
        download(base_url, target, token=token,
                 expected_sha256=manifest.checksum_sha256 if verify else None)
        if progress is not None:
            progress.segments_done = 1
            progress.received_bytes = manifest.total_size
        return target

    progress_lock = threading.Lock()

    def grab(index: int) -> None:
        seg_dest = segments.segment_path(target, index)
        download(f"{base_url}.{index}", seg_dest, token=token,
                 expected_sha256=manifest.segment_checksums[index] if verify else None)
        if progress is not None:
            with progress_lock:
                progress.segments_done += 1
                progress.received_bytes += seg_dest.stat().st_size

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for future in [pool.submit(grab, i) for i in range(manifest.expected_segments)]:
            future.result()
    joined = segments.join(target, manifest if verify else None, out=target.with_suffix(".joined"))
    for index in range(manifest.expected_segments):
        segments.segment_path(target, index).unlink()
    joined.rename(target)
    return target


def _obtain_local(base: Path, workdir: Path, *, verify: bool) -> Path:
    if base.is_file():
        return base
    repo = base
    if repo.is_dir():
        manifest_file = repo / (ARCHIVE_NAME + ".json")
        archive_file = repo / ARCHIVE_NAME
        if manifest_file.is_file():
            manifest = segments.parse_manifest(manifest_file.read_bytes())
            if manifest.expected_segments > 1:
                return segments.join(archive_file, manifest if verify else None,
                                     out=workdir / ARCHIVE_NAME)
            if archive_file.is_file():
                if verify and segments.file_sha256(archive_file) != manifest.checksum_sha256:
                    raise IntegrityError(f"{archive_file} failed manifest checksum")
                return archive_file
        if archive_file.is_file():
            return archive_file
        if (repo / (ARCHIVE_NAME + ".0")).is_file():
            raise NotFoundError(
                f"{repo} holds segments but no {ARCHIVE_NAME}.json manifest; "
                "a manifest must accompany segmented artifacts")
    raise NotFoundError(f"no artifact at {base}")


def fetch(ref: str | ArtifactRef, cache_root: str | Path | None = None, *,
          verify: bool = True, workers: int = 4, token: str | None = None,
          sniffers: Sequence[Sniffer] | None = None,
          progress: FetchProgress | None = None) -> tuple[Path, ArtifactMetadata]:
    """Fetch an artifact into the cache; returns (tree path, metadata).

    A complete cache entry is served without any network access.
    """
    if isinstance(ref, str):
        ref = ArtifactRef.from_location(ref)
    cache_root = Path(cache_root) if cache_root is not None else default_cache_root()
    is_remote = ref.location.startswith(("http://", "https://"))
    # cache keys come from the canonical location: the resolved base URL,
    # or the absolute path for local artifacts
    base = _base_location(ref.location) if is_remote \
        else str(Path(ref.location).absolute())
    entry = CacheEntry.for_location(base, cache_root)
    if entry.complete:
        return entry.tree_path, parse_metadata(entry.meta_path.read_bytes())
    with _EntryLock(entry):
        if entry.complete:
            return entry.tree_path, parse_metadata(entry.meta_path.read_bytes())
        if entry.path.exists():
            shutil.rmtree(entry.path)
        workdir = entry.path / "tmp"
        workdir.mkdir(parents=True)
        try:
            if is_remote:
                serialization = _obtain_remote(base, workdir, verify=verify,
                                               workers=workers, token=token,
                                               progress=progress)
            else:
                serialization = _obtain_local(Path(base), workdir, verify=verify)
            archive.unpack(serialization, entry.tree_path)
            meta = resolve_metadata(entry.tree_path, sniffers)
            entry.meta_path.write_bytes(write_metadata(meta))
            shutil.rmtree(workdir, ignore_errors=True)
            entry.mark_complete()
        except BaseException:
            shutil.rmtree(entry.path, ignore_errors=True)
            raise
    return entry.tree_path, meta


# --------------------------------------------------------------------------
# Push
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PushResult:
    ref: str
    repo_url: str
    files: tuple[str, ...]


def generate_readme(meta: ArtifactMetadata, ref: str) -> str:
    """Deterministic README for an uploaded artifact."""
    hint = f"\nSuggested software: `{meta.package_hint}`.\n" if meta.package_hint else "\n"
    return (
        f"# {ref}\n"
        "\n"
        "tag: artifact\n"
        "\n"
        f"This repository holds a research artifact of type `{meta.type}` "
        f"in format `{meta.format}`.\n"
        f"{hint}"
        "\n"
        "## Usage\n"
        "\n"
        "```\n"
        f"artifact pull {ref}\n"
        f"artifact resolve {meta.type} {meta.format}\n"
        "```\n"
        "\n"
        "## Benchmarks\n"
        "\n"
        "_Add benchmark results for this artifact here._\n"
        "\n"
        "## Reproduction\n"
        "\n"
        "_Add the commands or code that rebuild this artifact here._\n"
    )


def _put_file(repo_url: str, name: str, path: Path, token: str | None) -> None:
    url = repo_url.rstrip("/") + "/" + name
    local_digest = segments.file_sha256(path)
    try:
        with _request(url, method="HEAD", token=token) as response:
            if response.headers.get("X-Content-SHA256") == local_digest:
                logger.info("skipping %s: host already has identical bytes", name)
                return
    except (NotFoundError, ArtifactError, AuthError):
        pass
    _request(url, method="PUT", token=token, data=path.read_bytes()).close()


def push(source: str | Path, repo_url: str, *,
         max_segment_size: int = segments.DEFAULT_MAX_SEGMENT_SIZE,
         token: str | None = None,
         metadata: ArtifactMetadata | None = None,
         sniffers: Sequence[Sniffer] | None = None) -> PushResult:
    """Upload a tree or serialization file to a hub-style repository.

    Large files are split into segments below max_segment_size; a manifest
    and a generated README.md accompany every upload. Re-running a partial
    push skips files the host already holds with identical digests.
    """
    source = Path(source)
    ref = urlsplit(repo_url).path.strip("/") or repo_url
    with tempfile.TemporaryDirectory(prefix="artifact-push-") as tmp:
        tmpdir = Path(tmp)
        if source.is_dir():
            meta = metadata or resolve_metadata(source, sniffers)
            serialization = tmpdir / ARCHIVE_NAME
            archive.pack(source, serialization, metadata=metadata)
        else:
            serialization = source
            meta = metadata or resolve_metadata(source, sniffers)
        size = serialization.stat().st_size
        base = tmpdir / ARCHIVE_NAME
        uploads: list[tuple[str, Path]] = []
        if size > max_segment_size:
            parts, manifest = segments.split(serialization, max_segment_size, base=base)
            for index, part in enumerate(parts):
                uploads.append((f"{ARCHIVE_NAME}.{index}", part))
        else:
            manifest = segments.build_manifest_for_file(serialization, max_segment_size)
            segments.manifest_path(base).write_bytes(segments.write_manifest(manifest))
            uploads.append((ARCHIVE_NAME, serialization))
        uploads.append((ARCHIVE_NAME + ".json", segments.manifest_path(base)))
        readme_path = tmpdir / README_NAME
        readme_path.write_text(generate_readme(meta, ref), "utf-8")
        uploads.append((README_NAME, readme_path))

        done: list[str] = []
        for name, path in uploads:
            try:
                _put_file(repo_url, name, path, token)
            except AuthError:
                raise
            except ArtifactError as exc:
                remaining = [n for n, _ in uploads if n not in done]
                raise PartialUploadError(
                    f"upload interrupted at {name}: {exc}; "
                    f"uploaded so far: {', '.join(done) or 'nothing'}",
                    uploaded=done, remaining=remaining) from exc
            done.append(name)
    return PushResult(ref=ref, repo_url=repo_url, files=tuple(done))


# --------------------------------------------------------------------------
# Reference host server
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RequestLogEntry:
    method: str
    path: str
    range_header: str | None
    status: int


@dataclass
class HostConfig:
    root: Path
    token: str | None = None
    readonly: bool = False
    private: bool = False
    max_file_size: int | None = None
    ignore_ranges: bool = False


_RANGE_RE = re.compile(r"^bytes=(\d*)-(\d*)$")


class _HostHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("reference host: " + fmt, *args)

    def _log(self, status: int) -> None:
        self.server._record(RequestLogEntry(
            self.command, self.path, self.headers.get("Range"), status))

    def _config(self) -> HostConfig:
        return self.server.config

    def _reply(self, status: int, body: bytes = b"",
               content_type: str = "text/plain",
               extra: dict[str, str] | None = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for name, value in (extra or {}).items():
            self.send_header(name, value)
        self.end_headers()
        if self.command != "HEAD" and body:
            self.wfile.write(body)
        self._log(status)

    def _drain(self, length: int) -> None:
        """Consume a request body we are about to refuse, keeping the
        connection in a sane state for the error response."""
        remaining = length
        while remaining > 0:
            chunk = self.rfile.read(min(_DOWNLOAD_CHUNK, remaining))
            if not chunk:
                break
            remaining -= len(chunk)

    def _authorized(self, for_write: bool) -> bool:
        config = self._config()
        if config.token is None:
            return True
        if not for_write and not config.private:
            return True
        header = self.headers.get("Authorization", "")
        expected = f"Bearer {config.token}"
        return hmac.compare_digest(header.encode(), expected.encode())

    def _target(self) -> Path | None:
        raw = self.path.split("?", 1)[0].strip("/")
        if not raw:
            return self._config().root
        parts = [p for p in raw.split("/") if p]
        if any(p in (".", "..") for p in parts):
            return None
        return self._config().root.joinpath(*parts)

    def _serve_file(self, path: Path) -> None:
        size = path.stat().st_size
        range_header = self.headers.get("Range")
        config = self._config()
        start, end = 0, size - 1
        status = 200
        extra = {"Accept-Ranges": "bytes"}
        if range_header and not config.ignore_ranges:
            match = _RANGE_RE.match(range_header)
            if match:
                start_s, end_s = match.groups()
                if start_s:
                    start = int(start_s)
                    end = min(int(end_s), size - 1) if end_s else size - 1
                elif end_s:
                    start = max(0, size - int(end_s))
                if start >= size or (start_s and end_s and int(end_s) < start):
                    self._reply(416, b"range not satisfiable",
                                extra={"Content-Range": f"bytes */{size}"})
                    return
                status = 206
                extra["Content-Range"] = f"bytes {start}-{end}/{size}"
        length = end - start + 1
        self.send_response(status)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Content-Length", str(length))
        for name, value in extra.items():
            self.send_header(name, value)
        if self.command == "HEAD":
            self.send_header("X-Content-SHA256", segments.file_sha256(path))
        self.end_headers()
        if self.command != "HEAD":
            with open(path, "rb") as source:
                source.seek(start)
                remaining = length
                while remaining > 0:
                    chunk = source.read(min(_DOWNLOAD_CHUNK, remaining))
                    if not chunk:
                        break
                    self.wfile.write(chunk)
                    remaining -= len(chunk)
        self._log(status)

    def _handle_read(self) -> None:
        if not self._authorized(for_write=False):
            self._reply(401, b"authorization required",
                        extra={"WWW-Authenticate": "Bearer"})
            return
        target = self._target()
        if target is None or not target.exists():
            self._reply(404, b"not found")
            return
        if target.is_dir():
            listing = [
                {"name": child.name, "size": child.stat().st_size}
                for child in sorted(target.iterdir()) if child.is_file()
            ]
            self._reply(200, json.dumps(listing).encode(), "application/json")
            return
        self._serve_file(target)

    do_GET = _handle_read
    do_HEAD = _handle_read

    def do_PUT(self) -> None:
        config = self._config()
        length_header = self.headers.get("Content-Length")
        length = int(length_header) if length_header is not None else 0
        if config.readonly:
            self._drain(length)
            self._reply(403, b"host is read-only")
            return
        if not self._authorized(for_write=True):
            self._drain(length)
            self._reply(401, b"authorization required",
                        extra={"WWW-Authenticate": "Bearer"})
            return
        target = self._target()
        if target is None or target == config.root:
            self._drain(length)
            self._reply(400, b"bad upload path")
            return
        if length_header is None:
            self._reply(411, b"length required")
            return
        if config.max_file_size is not None and length > config.max_file_size:
            self._drain(length)
            self._reply(413, f"file exceeds host limit of "
                             f"{config.max_file_size} bytes".encode())
            return
        target.parent.mkdir(parents=True, exist_ok=True)
        received = 0
        with tempfile.NamedTemporaryFile(dir=target.parent, delete=False) as out:
            temp_name = out.name
            while received < length:
                chunk = self.rfile.read(min(_DOWNLOAD_CHUNK, length - received))
                if not chunk:
                    break
                out.write(chunk)
                received += len(chunk)
        if received != length:
            os.unlink(temp_name)
            self._reply(400, b"truncated upload")
            return
        os.replace(temp_name, target)
        self._reply(201, b"created")


class ReferenceHost:
    """Threaded reference artifact host for tests, demos, and the CLI."""

    def __init__(self, root: str | Path, host: str = "127.0.0.1", port: int = 0, *,
                 token: str | None = None, readonly: bool = False,
                 private: bool = False, max_file_size: int | None = None,
                 ignore_ranges: bool = False):
        self.config = HostConfig(Path(root), token, readonly, private,
                                 max_file_size, ignore_ranges)
        self._httpd = ThreadingHTTPServer((host, port), _HostHandler)
        self._httpd.daemon_threads = True
        setattr(self._httpd, "config", self.config)
        setattr(self._httpd, "_record", self._record)
        self._log: list[RequestLogEntry] = []
        self._log_lock = threading.Lock()
        self._thread: threading.Thread | None = None

    def _record(self, entry: RequestLogEntry) -> None:
        with self._log_lock:
            self._log.append(entry)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def request_log(self) -> list[RequestLogEntry]:
        with self._log_lock:
            return list(self._log)

    def clear_log(self) -> None:
        with self._log_lock:
            self._log.clear()

    def start(self) -> "ReferenceHost":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ReferenceHost":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(root: str | Path, address: str = "127.0.0.1:8750", *,
          token: str | None = None, readonly: bool = False,
          private: bool = False, max_file_size: int | None = None) -> ReferenceHost:
    """Construct (but do not start) a reference host bound to address."""
    host, _, port = address.partition(":")
    return ReferenceHost(root, host or "127.0.0.1", int(port or 0), token=token,
                         readonly=readonly, private=private,
                         max_file_size=max_file_size)
