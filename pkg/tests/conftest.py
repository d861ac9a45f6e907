"""Shared fixtures and oracles for the test suite."""

from __future__ import annotations

import hashlib
import random
from pathlib import Path

import pytest

from artifact import hosts, p2p

_acceptance_results: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if "test_acceptance" in item.nodeid and report.when == "call":
        label = getattr(item.function, "_acceptance_label", item.name)
        _acceptance_results[item.nodeid] = (label, report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance checks")
    for nodeid, (label, outcome) in sorted(_acceptance_results.items()):
        mark = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            outcome, outcome.upper())
        terminalreporter.write_line(f"{mark}  {label}  [{nodeid.split('::')[-1]}]")


def read_tar_headers(raw: bytes) -> list[dict]:
    """Minimal raw ustar reader, independent of the code under test."""
    entries = []
    pos = 0
    while pos + 512 <= len(raw):
        block = raw[pos:pos + 512]
        if block == b"\x00" * 512:
            break

        def octal(field: bytes) -> int:
            text = field.split(b"\x00")[0].strip(b" \x00")
            return int(text, 8) if text else 0

        name = block[0:100].split(b"\x00")[0].decode("utf-8")
        prefix = block[345:500].split(b"\x00")[0].decode("utf-8")
        size = octal(block[124:136])
        entries.append({
            "name": f"{prefix}/{name}" if prefix else name,
            "mode": octal(block[100:108]),
            "uid": octal(block[108:116]),
            "gid": octal(block[116:124]),
            "size": size,
            "mtime": octal(block[136:148]),
            "type": chr(block[156]),
            "uname": block[265:297].split(b"\x00")[0].decode("utf-8"),
            "gname": block[297:329].split(b"\x00")[0].decode("utf-8"),
        })
        pos += 512 + ((size + 511) // 512) * 512
    return entries


def tree_digest(root: Path) -> str:
    """Order-independent digest of a tree's relative paths and contents."""
    hasher = hashlib.sha256()
    records = []
    for path in sorted(root.rglob("*")):
        rel = path.relative_to(root).as_posix()
        if path.is_dir():
            records.append(f"d {rel}\n".encode())
        else:
            records.append(f"f {rel} ".encode()
                           + hashlib.sha256(path.read_bytes()).digest() + b"\n")
    for record in records:
        hasher.update(record)
    return hasher.hexdigest()


def make_tree(root: Path, spec: dict[str, bytes | None]) -> Path:
    """Create files (bytes values) and directories (None values) under root."""
    root.mkdir(parents=True, exist_ok=True)
    for rel, content in spec.items():
        path = root / rel
        if content is None:
            path.mkdir(parents=True, exist_ok=True)
        else:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(content)
    return root


def random_tree(root: Path, rng: random.Random, *, files: int,
                max_depth: int = 3, max_size: int = 4096) -> Path:
    """A tree of random names and mixed content patterns."""
    root.mkdir(parents=True, exist_ok=True)
    dirs = [root]
    for _ in range(rng.randrange(0, files // 2 + 1)):
        parent = rng.choice(dirs)
        if len(parent.relative_to(root).parts) >= max_depth:
            continue
        child = parent / f"d{rng.randrange(10**6):06d}"
        child.mkdir(exist_ok=True)
        dirs.append(child)
    for index in range(files):
        parent = rng.choice(dirs)
        size = rng.randrange(0, max_size + 1)
        style = rng.randrange(3)
        if style == 0:
            content = rng.randbytes(size)
        elif style == 1:
            content = bytes([rng.randrange(4)]) * size
        else:
            content = (b"the quick brown fox %d " % index) * (size // 20 + 1)
        (parent / f"f{index:04d}_{rng.randrange(10**6):06d}.bin").write_bytes(content)
    return root


@pytest.fixture
def host_factory(tmp_path_factory):
    """Start reference hosts that are torn down after the test."""
    started = []

    def factory(**kwargs) -> hosts.ReferenceHost:
        root = tmp_path_factory.mktemp("host-root")
        host = hosts.ReferenceHost(root, **kwargs).start()
        started.append(host)
        return host

    yield factory
    for host in started:
        host.stop()


@pytest.fixture
def relay_factory():
    """Start rendezvous relays that are torn down after the test."""
    started = []

    def factory(**kwargs) -> p2p.Relay:
        relay = p2p.Relay(**kwargs).start()
        started.append(relay)
        return relay

    yield factory
    for relay in started:
        relay.stop()
