"""Handler and URL-scheme registries.

Handlers map an exact (type, format) pair to a descriptor naming the class
that loads such artifacts and the package that provides it. Resolution
failures carry a package hint whenever one can be derived, so users learn
what software to install.

Scheme records translate short locations like ``hf:user/repo`` into concrete
HTTP(S) URLs or local paths; plain http(s) URLs pass through untouched.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import (
    HandlerConflictError,
    NoHandlerError,
    UnknownSchemeError,
)
from .metadata import ArtifactMetadata

logger = logging.getLogger(__name__)

HANDLERS_CONFIG_NAME = "handlers.json"

_SCHEME_RE = re.compile(r"^[a-z][a-z0-9+.-]*$")


@dataclass(frozen=True)
class HandlerKey:
    type: str
    format: str

    def __post_init__(self) -> None:
        if not self.type or not self.format:
            raise ValueError("handler key needs non-empty type and format")

    def __str__(self) -> str:
        return f"{self.type}/{self.format}"


@dataclass(frozen=True)
class HandlerRecord:
    key: HandlerKey
    name: str
    package_hint: str
    capabilities: tuple[str, ...] = ()


@dataclass(frozen=True)
class SchemeRecord:
    scheme: str
    resolver: Callable[[str], str]

    def __post_init__(self) -> None:
        if not _SCHEME_RE.match(self.scheme):
            raise ValueError(f"invalid scheme name: {self.scheme!r}")


def _record(type_: str, format_: str, name: str, hint: str, *caps: str) -> HandlerRecord:
    return HandlerRecord(HandlerKey(type_, format_), name, hint, caps)


# Built-in handler table: every (type, format) pair with a known loader.
SEED_HANDLERS: tuple[HandlerRecord, ...] = (
    _record("sparse_index", "terrier", "TerrierIndex", "python-terrier", "bm25-retrieval"),
    _record("sparse_index", "anserini", "AnseriniIndex", "pyterrier-anserini", "bm25-retrieval"),
    _record("sparse_index", "pisa", "PisaIndex", "pyterrier-pisa", "bm25-retrieval"),
    _record("sparse_index", "ciff", "CiffIndex", "pyterrier-ciff", "index-interchange"),
    _record("sparse_index", "bmp", "BmpIndex", "bmp", "learned-sparse-retrieval"),
    _record("dense_index", "flex", "FlexIndex", "pyterrier-dr", "dense-retrieval"),
    _record("corpus_graph", "np_topk", "CorpusGraph", "pyterrier-adaptive", "graph-traversal"),
    _record("key_value_cache", "sqlite3", "KeyValueCache", "pyterrier-caching", "key-value-cache"),
    _record("indexer_cache", "lz4pickle", "IndexerCache", "pyterrier-caching", "indexing-cache"),
    _record("retriever_cache", "dbm.dumb", "RetrieverCache", "pyterrier-caching", "retrieval-cache"),
    _record("scorer_cache", "sqlite3", "ScorerCache", "pyterrier-caching", "scoring-cache"),
    _record("scorer_cache", "hdf5", "DenseScorerCache", "pyterrier-caching", "scoring-cache"),
    _record("cde_cache", "np_pickle", "CDECache", "pyterrier-dr", "embedding-cache"),
    _record("quality_score_cache", "numpy", "QualCache", "pyterrier-quality", "quality-scores"),
)

_SEED_HINTS = {record.key: record.package_hint for record in SEED_HANDLERS}

ENV_HUB_URL = "ARTIFACT_HUB_URL"
ENV_DATASET_URL = "ARTIFACT_DATASET_URL"

DEFAULT_HUB_URL = "http://127.0.0.1:8750"


class Registry:
    """Immutable-after-setup lookup of handlers and URL schemes."""

    def __init__(self) -> None:
        self._handlers: dict[HandlerKey, HandlerRecord] = {}
        self._schemes: dict[str, SchemeRecord] = {}

    # --- handlers ---

    def register_handler(self, record: HandlerRecord, *, override: bool = False) -> None:
        if record.key in self._handlers and not override:
            raise HandlerConflictError(f"handler already registered for {record.key}")
        if record.key in self._handlers:
            logger.info("handler override for %s: %s -> %s", record.key,
                        self._handlers[record.key].name, record.name)
        self._handlers[record.key] = record

    def resolve_handler(self, meta: ArtifactMetadata) -> HandlerRecord:
        key = HandlerKey(meta.type, meta.format)
        record = self._handlers.get(key)
        if record is not None:
            return record
        hint = meta.package_hint or _SEED_HINTS.get(key)
        if hint:
            raise NoHandlerError(
                f"no handler registered for {key}; installing the package "
                f"\"{hint}\" may provide one")
        raise NoHandlerError(f"no handler registered for unknown artifact {key}")

    def handlers(self) -> list[HandlerRecord]:
        return list(self._handlers.values())

    # --- schemes ---

    def register_scheme(self, record: SchemeRecord) -> None:
        if record.scheme in self._schemes:
            raise HandlerConflictError(f"scheme already registered: {record.scheme}")
        self._schemes[record.scheme] = record

    def resolve_location(self, url: str) -> str:
        """Translate a location into an HTTP(S) URL or local path."""
        if url.startswith(("http://", "https://")):
            return url
        scheme, sep, identifier = url.partition(":")
        if sep and _SCHEME_RE.match(scheme):
            record = self._schemes.get(scheme)
            if record is None:
                known = ", ".join(sorted(self._schemes)) or "none"
                raise UnknownSchemeError(
                    f"unknown location scheme {scheme!r} (registered schemes: {known})")
            return record.resolver(identifier)
        return url  # bare local path

    def schemes(self) -> list[str]:
        return sorted(self._schemes)


def _hub_resolver(base_url: str) -> Callable[[str], str]:
    def resolve(identifier: str) -> str:
        return f"{base_url.rstrip('/')}/{identifier.strip('/')}"
    return resolve


def _dataset_resolver(base_url: str | None) -> Callable[[str], str]:
    def resolve(identifier: str) -> str:
        if base_url is None:
            raise UnknownSchemeError(
                "the dataset: scheme needs a repository base URL; set "
                f"{ENV_DATASET_URL}")
        return f"{base_url.rstrip('/')}/{identifier.strip('/')}"
    return resolve


def load_registry(config_path: str | Path | None = None,
                  hub_url: str | None = None,
                  dataset_url: str | None = None) -> Registry:
    """Registry seeded with the built-in handler table and default schemes.

    A handlers.json config file (array of {type, format, name, package_hint,
    capabilities}) is merged on top; duplicate keys override seed entries.
    """
    registry = Registry()
    for record in SEED_HANDLERS:
        registry.register_handler(record)
    if config_path is None:
        candidate = Path(HANDLERS_CONFIG_NAME)
        config_path = candidate if candidate.is_file() else None
    if config_path is not None:
        raw = json.loads(Path(config_path).read_text("utf-8"))
        if not isinstance(raw, list):
            raise ValueError("handlers config must be a JSON array")
        for item in raw:
            record = HandlerRecord(
                HandlerKey(item["type"], item["format"]),
                item.get("name", f"{item['type']}/{item['format']}"),
                item.get("package_hint", ""),
                tuple(item.get("capabilities", ())),
            )
            registry.register_handler(record, override=True)
    hub = hub_url or os.environ.get(ENV_HUB_URL) or DEFAULT_HUB_URL
    registry.register_scheme(SchemeRecord("hf", _hub_resolver(hub)))
    dataset = dataset_url or os.environ.get(ENV_DATASET_URL)
    registry.register_scheme(SchemeRecord("dataset", _dataset_resolver(dataset)))
    return registry
