"""CLI surface tests: subcommands, exit codes, JSON output."""

import json
import os

import pytest
from click.testing import CliRunner

from artifact import archive
from artifact.cli import main

from conftest import make_tree, tree_digest


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args, **kwargs):
    return runner.invoke(main, [str(a) for a in args], **kwargs)


def test_resolve_known_pair(runner):
    result = invoke(runner, "resolve", "sparse_index", "pisa")
    assert result.exit_code == 0
    assert "PisaIndex" in result.output
    assert "pyterrier-pisa" in result.output


def test_resolve_unknown_pair_exit_4(runner):
    result = invoke(runner, "resolve", "sparse_index", "nosuch")
    assert result.exit_code == 4


def test_resolve_unknown_with_hint(runner):
    result = invoke(runner, "resolve", "sparse_index", "nosuch", "--hint", "my-pkg")
    assert result.exit_code == 4
    assert "my-pkg" in result.output


def test_resolve_json_stable(runner):
    first = invoke(runner, "resolve", "dense_index", "flex", "--json")
    second = invoke(runner, "resolve", "dense_index", "flex", "--json")
    assert first.exit_code == 0
    assert first.output == second.output
    payload = json.loads(first.output)
    assert payload["package_hint"] == "pyterrier-dr"
    assert first.output.strip() == json.dumps(payload, sort_keys=True,
                                              separators=(",", ":"))


def test_unknown_subcommand_exit_2(runner):
    result = invoke(runner, "frobnicate")
    assert result.exit_code == 2


def test_pack_unpack_inspect_flow(runner, tmp_path):
    tree = make_tree(tmp_path / "tree", {"a.txt": b"alpha", "sub/b.bin": b"\x00" * 64})
    out = tmp_path / "a.tar.lz4"
    result = invoke(runner, "pack", tree, "-o", out,
                    "--type", "sparse_index", "--format", "terrier")
    assert result.exit_code == 0, result.output
    assert out.is_file()

    result = invoke(runner, "inspect", out)
    assert result.exit_code == 0
    assert "a.txt" in result.output
    assert "type=sparse_index" in result.output
    assert "(embedded)" in result.output

    dest = tmp_path / "dest"
    result = invoke(runner, "unpack", out, dest)
    assert result.exit_code == 0
    assert (dest / "a.txt").read_bytes() == b"alpha"
    assert tree_digest(dest) != tree_digest(tree)  # dest gained pt_meta.json
    assert (dest / "pt_meta.json").is_file()


def test_pack_requires_type_and_format_together(runner, tmp_path):
    tree = make_tree(tmp_path / "tree", {"a.txt": b"a"})
    result = invoke(runner, "pack", tree, "--type", "sparse_index")
    assert result.exit_code == 2


def test_inspect_json_shape(runner, tmp_path):
    tree = make_tree(tmp_path / "tree", {"index.ciff": b"ciff"})
    out = tmp_path / "a.tar.lz4"
    invoke(runner, "pack", tree, "-o", out)
    result = invoke(runner, "inspect", out, "--json")
    assert result.exit_code == 0
    payload = json.loads(result.output)
    assert payload["entries"][0]["path"] == "index.ciff"
    assert payload["metadata"]["format"] == "ciff"
    assert payload["inferred"] is True


def test_sniff_tree(runner, tmp_path):
    tree = make_tree(tmp_path / "tree", {"segments_1": b"", "write.lock": b""})
    result = invoke(runner, "sniff", tree)
    assert result.exit_code == 0
    assert "format=anserini" in result.output
    assert "(inferred)" in result.output


def test_sniff_unknown_exit_4(runner, tmp_path):
    tree = make_tree(tmp_path / "tree", {"blob.xyz": b"?"})
    result = invoke(runner, "sniff", tree)
    assert result.exit_code == 4


def test_split_verify_join_flow(runner, tmp_path):
    source = tmp_path / "artifact.tar.lz4"
    source.write_bytes(os.urandom(10_000))
    original = source.read_bytes()

    result = invoke(runner, "split", source, "--size", "3000")
    assert result.exit_code == 0
    assert (tmp_path / "artifact.tar.lz4.3").is_file()

    result = invoke(runner, "verify", source)
    assert result.exit_code == 0
    assert "ok" in result.output

    corrupted = bytearray((tmp_path / "artifact.tar.lz4.2").read_bytes())
    corrupted[0] ^= 0xFF
    (tmp_path / "artifact.tar.lz4.2").write_bytes(bytes(corrupted))
    result = invoke(runner, "verify", source, "--json")
    assert result.exit_code == 3
    payload = json.loads(result.output)
    assert payload["ok"] is False
    assert any(m["index"] == 2 for m in payload["mismatches"])

    # restore and join to a fresh output
    (tmp_path / "artifact.tar.lz4.2").write_bytes(
        bytes(a ^ b for a, b in zip(corrupted, bytes([0xFF] + [0] * (len(corrupted) - 1)))))
    joined = tmp_path / "joined.tar.lz4"
    result = invoke(runner, "join", source, "-o", joined)
    assert result.exit_code == 0
    assert joined.read_bytes() == original


def test_join_missing_segment_exit_1(runner, tmp_path):
    source = tmp_path / "f"
    source.write_bytes(b"0123456789")
    invoke(runner, "split", source, "--size", "4")
    (tmp_path / "f.1").unlink()
    result = invoke(runner, "join", source, "-o", tmp_path / "out")
    assert result.exit_code == 1
    assert "missing" in result.output


def test_pull_and_push_cli(runner, tmp_path, host_factory):
    host = host_factory()
    tree = make_tree(tmp_path / "tree", {
        "pt_meta.json": b'{"type":"sparse_index","format":"terrier"}',
        "data.bin": os.urandom(5000),
    })
    result = invoke(runner, "push", tree, f"{host.url}/user/demo")
    assert result.exit_code == 0, result.output
    assert "README.md" in result.output

    cache = tmp_path / "cache"
    result = invoke(runner, "pull", f"{host.url}/user/demo", "--cache", cache)
    assert result.exit_code == 0, result.output
    assert "type=sparse_index" in result.output
    assert "TerrierIndex" in result.output
    tree_line = [l for l in result.output.splitlines() if l.startswith("pulled to ")]
    pulled_path = tree_line[0].removeprefix("pulled to ")
    result = invoke(runner, "sniff", pulled_path)
    assert result.exit_code == 0
    assert "type=sparse_index format=terrier" in result.output


def test_pull_integrity_error_exit_3(runner, tmp_path, host_factory):
    host = host_factory()
    tree = make_tree(tmp_path / "tree", {
        "pt_meta.json": b'{"type":"sparse_index","format":"terrier"}',
        "data.bin": os.urandom(5000),
    })
    invoke(runner, "push", tree, f"{host.url}/user/demo")
    serialization = tmp_path / "tampered.tar.lz4"
    archive.pack(tree, serialization)
    corrupted = bytearray(serialization.read_bytes())
    corrupted[-1] ^= 0xFF
    import urllib.request
    request = urllib.request.Request(
        f"{host.url}/user/demo/artifact.tar.lz4", method="PUT",
        data=bytes(corrupted))
    urllib.request.urlopen(request, timeout=10).close()
    result = invoke(runner, "pull", f"{host.url}/user/demo",
                    "--cache", tmp_path / "cache")
    assert result.exit_code == 3


def test_pull_unknown_scheme_exit_4(runner, tmp_path):
    result = invoke(runner, "pull", "nosuch:whatever", "--cache", tmp_path / "c")
    assert result.exit_code == 4
    assert "hf" in result.output  # lists registered schemes


def test_pull_not_found_exit_4(runner, tmp_path, host_factory):
    host = host_factory()
    result = invoke(runner, "pull", f"{host.url}/user/none",
                    "--cache", tmp_path / "c")
    assert result.exit_code == 4


def test_push_auth_failure_exit_5(runner, tmp_path, host_factory):
    host = host_factory(token="sesame")
    tree = make_tree(tmp_path / "tree", {
        "pt_meta.json": b'{"type":"sparse_index","format":"terrier"}',
        "x.bin": b"x",
    })
    result = invoke(runner, "push", tree, f"{host.url}/u/locked")
    assert result.exit_code == 5


def test_receive_invalid_code_exit_2(runner, tmp_path):
    result = invoke(runner, "receive", "not-a-code!", tmp_path / "dest",
                    "--relay", "127.0.0.1:1")
    assert result.exit_code == 2


def test_send_timeout_exit_1(runner, tmp_path, relay_factory):
    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {"payload.bin": b"x"})
    result = invoke(runner, "send", tree, "--relay", relay.address,
                    "--timeout", "0.5")
    assert result.exit_code == 1
    assert "transfer code:" in result.output


def test_send_receive_cli(runner, tmp_path, relay_factory):
    import queue
    import threading

    from artifact import p2p as p2p_mod

    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {"payload.bin": os.urandom(2000)})
    codes: queue.Queue = queue.Queue()
    thread = threading.Thread(
        target=lambda: p2p_mod.send(tree, relay.address, timeout=20,
                                    on_code=codes.put))
    thread.start()
    code = codes.get(timeout=10)
    result = invoke(runner, "receive", code, tmp_path / "dest",
                    "--relay", relay.address, "--timeout", "20")
    thread.join(timeout=10)
    assert result.exit_code == 0, result.output
    assert (tmp_path / "dest" / "payload.bin").read_bytes() == \
        (tree / "payload.bin").read_bytes()


def test_receive_unknown_code_exit_4(runner, tmp_path, relay_factory):
    relay = relay_factory()
    result = invoke(runner, "receive", "66-antenna-transit", tmp_path / "dest",
                    "--relay", relay.address, "--timeout", "5")
    assert result.exit_code == 4


def test_version_flag(runner):
    result = invoke(runner, "--version")
    assert result.exit_code == 0


def _read_announce_line(stream) -> str:
    line = stream.readline().decode()
    assert line, "command exited before announcing its address"
    return line.strip()


def test_serve_command_subprocess(tmp_path):
    import subprocess
    import sys
    import urllib.request

    root = make_tree(tmp_path / "root", {"repo/file.bin": b"served-bytes"})
    proc = subprocess.Popen(
        [sys.executable, "-m", "artifact.cli", "serve", str(root),
         "--addr", "127.0.0.1:0"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    try:
        line = _read_announce_line(proc.stdout)
        url = line.split()[-1]
        with urllib.request.urlopen(f"{url}/repo/file.bin", timeout=10) as resp:
            assert resp.read() == b"served-bytes"
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_relay_command_subprocess(tmp_path):
    import subprocess
    import sys

    from artifact import p2p as p2p_mod

    proc = subprocess.Popen(
        [sys.executable, "-m", "artifact.cli", "relay", "--addr", "127.0.0.1:0"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
    try:
        line = _read_announce_line(proc.stdout)
        address = line.split()[-1]
        import queue
        import threading
        tree = make_tree(tmp_path / "tree", {"x.bin": b"via-cli-relay"})
        codes: queue.Queue = queue.Queue()
        thread = threading.Thread(
            target=lambda: p2p_mod.send(tree, address, timeout=20,
                                        on_code=codes.put))
        thread.start()
        code = codes.get(timeout=10)
        dest = p2p_mod.receive(code, tmp_path / "dest", address, timeout=20)
        thread.join(timeout=10)
        assert (dest / "x.bin").read_bytes() == b"via-cli-relay"
    finally:
        proc.terminate()
        proc.wait(timeout=10)
