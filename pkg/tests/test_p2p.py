"""Transfer codes, relay protocol, and send/receive tests."""

import hashlib
import os
import queue
import random
import re
import socket
import struct
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact import archive, p2p
from artifact.errors import (
    CollisionError,
    IntegrityError,
    InvalidCodeError,
    NoSuchChannelError,
    ProtocolError,
    TransferAbortedError,
)
from artifact.p2p import (
    ACCEPT,
    CLAIM,
    DATA,
    DONE,
    ERROR,
    OPEN,
    TransferCode,
    WORDS_A,
    WORDS_B,
    generate_code,
    parse_code,
    read_frame,
    write_frame,
)

from conftest import make_tree, tree_digest


# --- codes ------------------------------------------------------------------

def test_wordlists_shape():
    assert len(WORDS_A) == 256 and len(set(WORDS_A)) == 256
    assert len(WORDS_B) == 256 and len(set(WORDS_B)) == 256
    assert all(re.fullmatch(r"[a-z]+", w) for w in WORDS_A + WORDS_B)
    assert "antenna" in WORDS_A
    assert "transit" in WORDS_B


def test_generated_code_format():
    rng = random.Random(99)
    for _ in range(200):
        code = generate_code(rng)
        assert re.fullmatch(r"[0-9]{1,3}-[a-z]+-[a-z]+", code.render())
        assert 1 <= code.channel <= 999


def test_antenna_transit_example_parses():
    code = parse_code("66-antenna-transit")
    assert code == TransferCode(66, "antenna", "transit")
    assert code.render() == "66-antenna-transit"


def test_channel_zero_invalid():
    with pytest.raises(InvalidCodeError):
        parse_code("0-antenna-transit")


def test_unknown_word_invalid():
    with pytest.raises(InvalidCodeError):
        parse_code("66-zzzzz-transit")
    with pytest.raises(InvalidCodeError):
        parse_code("66-antenna-zzzzz")


def test_swapped_lists_invalid():
    with pytest.raises(InvalidCodeError):
        parse_code("66-transit-antenna")


def test_malformed_text_invalid():
    for text in ("", "66", "66-antenna", "1000-antenna-transit",
                 "66-Antenna-Transit", "66 antenna transit"):
        with pytest.raises(InvalidCodeError):
            parse_code(text)


@settings(max_examples=100, deadline=None)
@given(channel=st.integers(min_value=1, max_value=999),
       w1=st.sampled_from(WORDS_A), w2=st.sampled_from(WORDS_B))
def test_render_parse_identity(channel, w1, w2):
    code = TransferCode(channel, w1, w2)
    assert parse_code(code.render()) == code


def test_generation_entropy_birthday_bound():
    # 10k draws from a 999*256*256 space: expected duplicate pairs ~0.76,
    # so more than 7 would flag a broken generator (Poisson tail < 1e-6).
    rng = random.Random(20260808)
    seen = [generate_code(rng).render() for _ in range(10_000)]
    duplicates = len(seen) - len(set(seen))
    space = 999 * 256 * 256
    expected_pairs = len(seen) * (len(seen) - 1) / (2 * space)
    assert expected_pairs < 1
    assert duplicates <= 7
    channels = {p2p.parse_code(s).channel for s in seen}
    assert len(channels) > 900  # all channels reachable


def test_code_digest_is_sha256_of_text():
    code = TransferCode(66, "antenna", "transit")
    assert code.digest() == hashlib.sha256(b"66-antenna-transit").digest()


# --- framing ----------------------------------------------------------------

def _socket_pair():
    server, client = socket.socketpair()
    server.settimeout(5)
    client.settimeout(5)
    return server, client


def test_frame_round_trip():
    a, b = _socket_pair()
    write_frame(a, DATA, b"payload")
    assert read_frame(b) == (DATA, b"payload")
    write_frame(b, DONE, b"\x00" * 32)
    assert read_frame(a) == (DONE, b"\x00" * 32)
    a.close(); b.close()


def test_frame_wire_layout():
    a, b = _socket_pair()
    write_frame(a, OPEN, b"abc")
    raw = b.recv(100)
    assert raw == struct.pack(">BI", OPEN, 3) + b"abc"
    a.close(); b.close()


def test_oversized_payload_rejected_on_write():
    a, b = _socket_pair()
    with pytest.raises(ProtocolError):
        write_frame(a, DATA, b"x" * (p2p.MAX_PAYLOAD + 1))
    a.close(); b.close()


def test_oversized_length_rejected_on_read():
    a, b = _socket_pair()
    a.sendall(struct.pack(">BI", DATA, p2p.MAX_PAYLOAD + 1))
    with pytest.raises(ProtocolError):
        read_frame(b)
    a.close(); b.close()


def test_unknown_frame_type_rejected():
    a, b = _socket_pair()
    a.sendall(struct.pack(">BI", 99, 0))
    with pytest.raises(ProtocolError):
        read_frame(b)
    a.close(); b.close()


def test_truncated_frame_aborts():
    a, b = _socket_pair()
    a.sendall(struct.pack(">BI", DATA, 10) + b"only5")
    a.close()
    with pytest.raises(TransferAbortedError):
        read_frame(b)
    b.close()


# --- relay protocol (raw sockets) -------------------------------------------

def _connect(relay):
    host, port = relay.address.split(":")
    sock = socket.create_connection((host, int(port)), timeout=5)
    sock.settimeout(5)
    return sock


def test_relay_pairs_open_and_claim(relay_factory):
    relay = relay_factory()
    code_hash = hashlib.sha256(b"1-antenna-transit").digest()
    sender = _connect(relay)
    write_frame(sender, OPEN, code_hash)
    receiver = _connect(relay)
    write_frame(receiver, CLAIM, code_hash)
    assert read_frame(sender)[0] == ACCEPT
    assert read_frame(receiver)[0] == ACCEPT
    sender.close(); receiver.close()


def test_relay_unknown_claim_errors(relay_factory):
    relay = relay_factory()
    receiver = _connect(relay)
    write_frame(receiver, CLAIM, hashlib.sha256(b"9-nobody-home").digest())
    frame_type, payload = read_frame(receiver)
    assert frame_type == ERROR
    assert b"no such channel" in payload
    receiver.close()


def test_relay_duplicate_open_errors_second(relay_factory):
    relay = relay_factory()
    code_hash = hashlib.sha256(b"2-antenna-transit").digest()
    first = _connect(relay)
    write_frame(first, OPEN, code_hash)
    second = _connect(relay)
    write_frame(second, OPEN, code_hash)
    frame_type, payload = read_frame(second)
    assert frame_type == ERROR
    assert b"already open" in payload
    first.close(); second.close()


def test_relay_pipes_data_and_confirms_done(relay_factory):
    relay = relay_factory()
    code_hash = hashlib.sha256(b"3-antenna-transit").digest()
    sender = _connect(relay)
    write_frame(sender, OPEN, code_hash)
    receiver = _connect(relay)
    write_frame(receiver, CLAIM, code_hash)
    read_frame(sender); read_frame(receiver)  # ACCEPT both
    write_frame(sender, DATA, b"chunk-1")
    write_frame(sender, DATA, b"chunk-2")
    digest = hashlib.sha256(b"chunk-1chunk-2").digest()
    write_frame(sender, DONE, digest)
    assert read_frame(receiver) == (DATA, b"chunk-1")
    assert read_frame(receiver) == (DATA, b"chunk-2")
    assert read_frame(receiver) == (DONE, digest)
    assert read_frame(sender)[0] == DONE  # delivery confirmation
    sender.close(); receiver.close()


def test_relay_channel_single_use(relay_factory):
    relay = relay_factory()
    code_hash = hashlib.sha256(b"4-antenna-transit").digest()
    sender = _connect(relay)
    write_frame(sender, OPEN, code_hash)
    receiver = _connect(relay)
    write_frame(receiver, CLAIM, code_hash)
    read_frame(sender); read_frame(receiver)
    write_frame(sender, DONE, hashlib.sha256(b"").digest())
    read_frame(receiver)
    read_frame(sender)
    # channel is gone: claiming again gets no-such-channel
    late = _connect(relay)
    write_frame(late, CLAIM, code_hash)
    frame_type, payload = read_frame(late)
    assert frame_type == ERROR and b"no such channel" in payload
    late.close(); sender.close(); receiver.close()


def test_relay_rejects_bad_opening_frame(relay_factory):
    relay = relay_factory()
    sock = _connect(relay)
    write_frame(sock, DATA, b"rude")
    frame_type, payload = read_frame(sock)
    assert frame_type == ERROR
    assert b"OPEN or CLAIM" in payload
    sock.close()


def test_relay_sender_disconnect_aborts_receiver(relay_factory):
    relay = relay_factory()
    code_hash = hashlib.sha256(b"5-antenna-transit").digest()
    sender = _connect(relay)
    write_frame(sender, OPEN, code_hash)
    receiver = _connect(relay)
    write_frame(receiver, CLAIM, code_hash)
    read_frame(sender); read_frame(receiver)
    sender.close()
    frame_type, payload = read_frame(receiver)
    assert frame_type == ERROR
    receiver.close()


# --- send / receive clients -------------------------------------------------

def _send_in_thread(source, relay, **kwargs):
    codes: queue.Queue = queue.Queue()
    box: dict = {}

    def run():
        try:
            box["result"] = p2p.send(source, relay.address, timeout=20,
                                     on_code=codes.put, **kwargs)
        except BaseException as exc:  # surfaced by the caller
            box["error"] = exc
    thread = threading.Thread(target=run)
    thread.start()
    return codes, box, thread


def test_send_receive_tree_round_trip(relay_factory, tmp_path):
    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {
        "pt_meta.json": b'{"type":"sparse_index","format":"terrier"}',
        "data.bin": os.urandom(50_000),
        "deep/nested.txt": b"nested",
    })
    codes, box, thread = _send_in_thread(tree, relay)
    code = codes.get(timeout=10)
    dest = p2p.receive(code, tmp_path / "dest", relay.address, timeout=20)
    thread.join(timeout=10)
    assert "error" not in box
    assert tree_digest(dest) == tree_digest(tree)
    assert box["result"].bytes_sent > 0


def test_send_receive_serialization_file(relay_factory, tmp_path):
    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {"data.bin": os.urandom(10_000)})
    packed = tmp_path / "a.tar.lz4"
    archive.pack(tree, packed)
    codes, box, thread = _send_in_thread(packed, relay)
    code = codes.get(timeout=10)
    dest = p2p.receive(code, tmp_path / "dest", relay.address, timeout=20)
    thread.join(timeout=10)
    assert box["result"].sha256 == hashlib.sha256(packed.read_bytes()).hexdigest()
    assert (dest / "data.bin").read_bytes() == (tree / "data.bin").read_bytes()


def test_second_receive_same_code_fails(relay_factory, tmp_path):
    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {"x.bin": b"x" * 1000})
    codes, box, thread = _send_in_thread(tree, relay)
    code = codes.get(timeout=10)
    p2p.receive(code, tmp_path / "dest", relay.address, timeout=20)
    thread.join(timeout=10)
    with pytest.raises(NoSuchChannelError):
        p2p.receive(code, tmp_path / "dest2", relay.address, timeout=5)


def test_wrong_code_is_no_such_channel(relay_factory, tmp_path):
    relay = relay_factory()
    with pytest.raises(NoSuchChannelError):
        p2p.receive("66-antenna-transit", tmp_path / "dest", relay.address,
                    timeout=5)


def test_send_timeout_when_no_receiver(relay_factory, tmp_path):
    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {"x.bin": b"x"})
    with pytest.raises(TransferAbortedError):
        p2p.send(tree, relay.address, timeout=1.0)


def test_explicit_code_collision_raises(relay_factory, tmp_path):
    relay = relay_factory()
    tree = make_tree(tmp_path / "tree", {"x.bin": b"x"})
    code = TransferCode(7, "antenna", "transit")
    codes, box, thread = _send_in_thread(tree, relay, code=code)
    codes.get(timeout=10)
    with pytest.raises(CollisionError):
        p2p.send(tree, relay.address, code=code, timeout=5)
    # release the parked sender
    p2p.receive(code, tmp_path / "dest", relay.address, timeout=20)
    thread.join(timeout=10)


def test_receiver_detects_digest_mismatch(relay_factory, tmp_path):
    relay = relay_factory()
    code = TransferCode(9, "antenna", "transit")

    def lying_sender():
        sock = _connect(relay)
        write_frame(sock, OPEN, code.digest())
        frame_type, _ = read_frame(sock)
        assert frame_type == ACCEPT
        write_frame(sock, DATA, b"actual payload")
        write_frame(sock, DONE, hashlib.sha256(b"different payload").digest())
        try:
            read_frame(sock)
        except TransferAbortedError:
            pass
        sock.close()

    thread = threading.Thread(target=lying_sender)
    thread.start()
    import time
    time.sleep(0.3)  # let the channel open
    with pytest.raises(IntegrityError):
        p2p.receive(code, tmp_path / "dest", relay.address, timeout=10)
    thread.join(timeout=10)
    assert not (tmp_path / "dest").exists()


def test_concurrent_transfers_do_not_interfere(relay_factory, tmp_path):
    relay = relay_factory()
    tree_a = make_tree(tmp_path / "a", {"a.bin": os.urandom(30_000)})
    tree_b = make_tree(tmp_path / "b", {"b.bin": os.urandom(30_000)})
    codes_a, box_a, thread_a = _send_in_thread(tree_a, relay)
    codes_b, box_b, thread_b = _send_in_thread(tree_b, relay)
    code_a = codes_a.get(timeout=10)
    code_b = codes_b.get(timeout=10)
    dest_b = p2p.receive(code_b, tmp_path / "dest-b", relay.address, timeout=20)
    dest_a = p2p.receive(code_a, tmp_path / "dest-a", relay.address, timeout=20)
    thread_a.join(timeout=10)
    thread_b.join(timeout=10)
    assert tree_digest(dest_a) == tree_digest(tree_a)
    assert tree_digest(dest_b) == tree_digest(tree_b)


def test_raw_code_never_crosses_the_wire(relay_factory, tmp_path):
    frames: list = []
    relay = relay_factory(frame_log=frames)
    tree = make_tree(tmp_path / "tree", {"x.bin": os.urandom(5000)})
    codes, box, thread = _send_in_thread(tree, relay)
    code = codes.get(timeout=10)
    p2p.receive(code, tmp_path / "dest", relay.address, timeout=20)
    thread.join(timeout=10)
    assert frames, "frame log should have captured traffic"
    code_bytes = code.encode()
    for _, payload in frames:
        assert code_bytes not in payload
    # the hash itself is what rendezvous uses
    assert any(payload == parse_code(code).digest() for _, payload in frames)
