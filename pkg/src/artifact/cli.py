"""Command-line interface: every library operation as one subcommand.

Exit codes: 0 success, 1 generic failure, 2 usage error, 3 integrity error,
4 not found / no handler, 5 auth error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import archive, hosts, p2p, segments
from .archive import PackOptions
from .errors import ArtifactError
from .metadata import ArtifactMetadata, resolve_metadata
from .registry import load_registry
from .segments import DEFAULT_MAX_SEGMENT_SIZE


class _Group(click.Group):
    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ArtifactError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(int(exc.exit_code))


@click.group(cls=_Group)
@click.version_option(package_name="artifact")
def main() -> None:
    """Pack, inspect, segment, and exchange research artifacts."""


def _canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _env_token(token: str | None) -> str | None:
    return token if token is not None else os.environ.get(hosts.ENV_TOKEN)


def _relay_default() -> str:
    return os.environ.get(p2p.ENV_RELAY, p2p.DEFAULT_RELAY_ADDRESS)


@main.command()
@click.argument("tree", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", default=archive.DEFAULT_ARCHIVE_NAME, show_default=True,
              help="Destination serialization file.")
@click.option("--type", "type_", help="Artifact type to embed as metadata.")
@click.option("--format", "format_", help="Artifact format to embed as metadata.")
@click.option("--hint", help="package_hint to embed alongside type/format.")
@click.option("--no-sort", is_flag=True, help="Keep filesystem entry order.")
@click.option("--keep-attrs", is_flag=True,
              help="Keep file modes, times, and ownership (not deterministic).")
@click.option("--level", type=click.IntRange(1, 12), default=1, show_default=True,
              help="Compression level.")
def pack(tree: str, output: str, type_: str | None, format_: str | None,
         hint: str | None, no_sort: bool, keep_attrs: bool, level: int) -> None:
    """Pack a directory tree into a serialization file."""
    if bool(type_) != bool(format_):
        raise click.UsageError("--type and --format must be given together")
    meta = ArtifactMetadata(type_, format_, hint) if type_ else None
    options = PackOptions(normalize_attributes=not keep_attrs,
                          sort_entries=not no_sort, compression_level=level)
    dest = archive.pack(tree, output, metadata=meta, options=options)
    click.echo(f"packed {tree} -> {dest} ({dest.stat().st_size} bytes)")


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.argument("dest", type=click.Path(file_okay=False))
def unpack(file: str, dest: str) -> None:
    """Extract a serialization file into a directory."""
    entries = archive.unpack(file, dest)
    click.echo(f"unpacked {len(entries)} entries into {dest}")


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def inspect(file: str, as_json: bool) -> None:
    """List entries and metadata of a serialization file."""
    entries = archive.list_entries(file)
    meta = None
    try:
        meta = resolve_metadata(file)
    except ArtifactError:
        pass
    if as_json:
        payload = {
            "entries": [
                {"path": e.path, "kind": e.kind, "mode": e.mode, "size": e.size}
                for e in entries
            ],
            "metadata": meta.to_dict() if meta else None,
            "inferred": bool(meta and meta.inferred),
        }
        click.echo(_canonical_json(payload))
        return
    for entry in entries:
        kind = "d" if entry.is_dir else "f"
        click.echo(f"{kind} {entry.mode:04o} {entry.size:>12} {entry.name}")
    if meta is None:
        click.echo("metadata: (none)")
    else:
        origin = "inferred" if meta.inferred else "embedded"
        click.echo(f"metadata: type={meta.type} format={meta.format} ({origin})")


@main.command()
@click.argument("artifact", type=click.Path(exists=True))
def sniff(artifact: str) -> None:
    """Resolve metadata for a tree or serialization file."""
    meta = resolve_metadata(artifact)
    origin = "inferred" if meta.inferred else "embedded"
    hint = f" package_hint={meta.package_hint}" if meta.package_hint else ""
    click.echo(f"type={meta.type} format={meta.format}{hint} ({origin})")


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--size", "segment_size", type=int, required=True,
              help="Maximum bytes per segment.")
def split(file: str, segment_size: int) -> None:
    """Split a file into numbered segments plus a manifest."""
    paths, manifest = segments.split(file, segment_size)
    click.echo(f"wrote {len(paths)} segments and {segments.manifest_path(file)}")


@main.command()
@click.argument("base")
@click.option("-o", "--output", type=click.Path(dir_okay=False),
              help="Joined output path (default: the base name itself).")
def join(base: str, output: str | None) -> None:
    """Join <base>.0.. segments back into one file."""
    out = segments.join(base, out=output)
    click.echo(f"joined -> {out} ({out.stat().st_size} bytes)")


@main.command()
@click.argument("base")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def verify(base: str, as_json: bool) -> None:
    """Verify a file or segment set against its manifest."""
    manifest_file = segments.manifest_path(base)
    if not manifest_file.is_file():
        raise ArtifactError(f"no manifest at {manifest_file}")
    manifest = segments.parse_manifest(manifest_file.read_bytes())
    report = segments.verify(base, manifest)
    if as_json:
        payload = {
            "ok": report.ok,
            "mismatches": [
                {"kind": m.kind, "index": m.index, "detail": m.detail}
                for m in report.mismatches
            ],
        }
        click.echo(_canonical_json(payload))
    else:
        if report.ok:
            click.echo("ok")
        for mismatch in report.mismatches:
            click.echo(f"mismatch: {mismatch.detail}")
    if not report.ok:
        sys.exit(3)


@main.command()
@click.argument("type_", metavar="TYPE")
@click.argument("format_", metavar="FORMAT")
@click.option("--hint", help="package_hint to include in failure messages.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def resolve(type_: str, format_: str, hint: str | None, as_json: bool) -> None:
    """Resolve a (type, format) pair to its registered handler."""
    registry = load_registry()
    record = registry.resolve_handler(ArtifactMetadata(type_, format_, hint))
    if as_json:
        click.echo(_canonical_json({
            "type": record.key.type,
            "format": record.key.format,
            "name": record.name,
            "package_hint": record.package_hint,
            "capabilities": list(record.capabilities),
        }))
    else:
        caps = ", ".join(record.capabilities) or "-"
        click.echo(f"{record.key}: {record.name} (package: {record.package_hint}; "
                   f"capabilities: {caps})")


@main.command()
@click.argument("location")
@click.option("--cache", type=click.Path(file_okay=False),
              help="Cache root (default: platform cache dir or $ARTIFACT_CACHE).")
@click.option("--token", help="Bearer token for private hosts.")
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--no-verify", is_flag=True, help="Skip checksum verification.")
def pull(location: str, cache: str | None, token: str | None,
         workers: int, no_verify: bool) -> None:
    """Fetch an artifact (URL, scheme:id, or local path) into the cache."""
    registry = load_registry()
    resolved = registry.resolve_location(location)
    tree, meta = hosts.fetch(resolved, cache, verify=not no_verify,
                             workers=workers, token=_env_token(token))
    handler_line = ""
    try:
        record = registry.resolve_handler(meta)
        handler_line = f"handler: {record.name} (package: {record.package_hint})"
    except ArtifactError as exc:
        handler_line = f"handler: none ({exc})"
    click.echo(f"pulled to {tree}")
    click.echo(f"metadata: type={meta.type} format={meta.format}")
    click.echo(handler_line)


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.argument("repo_url")
@click.option("--max-segment", type=int, default=DEFAULT_MAX_SEGMENT_SIZE,
              show_default=True, help="Split files larger than this many bytes.")
@click.option("--token", help="Bearer token (default: $ARTIFACT_TOKEN).")
@click.option("--type", "type_", help="Artifact type when metadata is absent.")
@click.option("--format", "format_", help="Artifact format when metadata is absent.")
def push(source: str, repo_url: str, max_segment: int, token: str | None,
         type_: str | None, format_: str | None) -> None:
    """Upload a tree or serialization file to a hub-style repository."""
    if bool(type_) != bool(format_):
        raise click.UsageError("--type and --format must be given together")
    meta = ArtifactMetadata(type_, format_) if type_ else None
    result = hosts.push(source, repo_url, max_segment_size=max_segment,
                        token=_env_token(token), metadata=meta)
    click.echo(f"pushed {result.ref}: {', '.join(result.files)}")


@main.command()
@click.argument("root", type=click.Path(exists=True, file_okay=False))
@click.option("--addr", default="127.0.0.1:8750", show_default=True,
              help="host:port to bind.")
@click.option("--limit", type=int, help="Maximum accepted upload size in bytes.")
@click.option("--token", help="Require this bearer token for uploads.")
@click.option("--private", is_flag=True, help="Require the token for reads too.")
@click.option("--readonly", is_flag=True, help="Refuse all uploads.")
def serve(root: str, addr: str, limit: int | None, token: str | None,
          private: bool, readonly: bool) -> None:
    """Run the reference artifact host over HTTP."""
    host = hosts.serve(root, addr, token=token, readonly=readonly,
                       private=private, max_file_size=limit)
    click.echo(f"serving {root} at {host.url}")
    try:
        host.serve_forever()
    except KeyboardInterrupt:
        host.stop()


@main.command()
@click.argument("source", type=click.Path(exists=True))
@click.option("--relay", default=None, help="Relay host:port "
              "(default: $ARTIFACT_RELAY or 127.0.0.1:8751).")
@click.option("--timeout", type=float, default=p2p.DEFAULT_TIMEOUT, show_default=True,
              help="Seconds to wait for a receiver.")
def send(source: str, relay: str | None, timeout: float) -> None:
    """Offer an artifact for a one-time peer-to-peer pickup."""
    result = p2p.send(source, relay or _relay_default(), timeout=timeout,
                      on_code=lambda code: click.echo(f"transfer code: {code}"))
    click.echo(f"sent {result.bytes_sent} bytes (sha256 {result.sha256})")


@main.command()
@click.argument("code")
@click.argument("dest", type=click.Path(file_okay=False))
@click.option("--relay", default=None, help="Relay host:port "
              "(default: $ARTIFACT_RELAY or 127.0.0.1:8751).")
@click.option("--timeout", type=float, default=p2p.DEFAULT_TIMEOUT, show_default=True)
def receive(code: str, dest: str, relay: str | None, timeout: float) -> None:
    """Receive an artifact offered under a one-time code."""
    path = p2p.receive(code, dest, relay or _relay_default(), timeout=timeout)
    click.echo(f"received into {path}")


@main.command()
@click.option("--addr", default=p2p.DEFAULT_RELAY_ADDRESS, show_default=True,
              help="host:port to bind.")
def relay(addr: str) -> None:
    """Run the rendezvous relay."""
    server = p2p.relay_serve(addr)
    click.echo(f"relay listening on {server.address}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
