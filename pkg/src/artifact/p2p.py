"""One-off peer-to-peer transfers through a rendezvous relay.

A sender packs the artifact, opens a channel at the relay under the SHA-256
of a freshly generated one-time code (channel number plus two words, e.g.
``66-antenna-transit``), and tells the code to the receiver out of band.
The receiver claims the channel with the same hash; the relay then pipes
the serialization file between them and deletes the channel, so a code is
never valid twice. The relay only ever sees the code's hash, never its
text, and holds no payload bytes beyond the frame in flight.

Wire protocol (both directions share one framing):

    frame := type(1 byte) length(4 bytes, big-endian) payload

    OPEN   sender -> relay   payload = SHA-256 of the canonical code text
    CLAIM  receiver -> relay payload = SHA-256 of the canonical code text
    ACCEPT relay -> both     empty; the channel is paired
    DATA   sender -> receiver (via relay)  file bytes, at most 1 MiB
    DONE   sender -> receiver (via relay)  SHA-256 of the whole file;
           relay -> sender   empty, confirms the DONE was delivered
    ERROR  any -> any        UTF-8 reason

Integrity comes from the DONE digest; there is no encryption, so treat the
relay as a trusted courier.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import re
import secrets
import select
import socket
import struct
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import archive
from .errors import (
    ArtifactError,
    CollisionError,
    IntegrityError,
    InvalidCodeError,
    NoSuchChannelError,
    ProtocolError,
    TransferAbortedError,
)

OPEN, CLAIM, ACCEPT, DATA, DONE, ERROR = range(1, 7)

_FRAME_TYPES = {OPEN, CLAIM, ACCEPT, DATA, DONE, ERROR}
MAX_PAYLOAD = 1 << 20

DEFAULT_RELAY_ADDRESS = "127.0.0.1:8751"
DEFAULT_TIMEOUT = 600.0
ENV_RELAY = "ARTIFACT_RELAY"

_HEADER = struct.Struct(">BI")


def _load_words(name: str) -> tuple[str, ...]:
    text = importlib.resources.files("artifact.data").joinpath(name).read_text("utf-8")
    words = tuple(text.split())
    if len(words) != 256 or len(set(words)) != 256:
        raise RuntimeError(f"word list {name} must hold 256 distinct words")
    return words


WORDS_A = _load_words("words_a.txt")
WORDS_B = _load_words("words_b.txt")

_INDEX_A = {word: i for i, word in enumerate(WORDS_A)}
_INDEX_B = {word: i for i, word in enumerate(WORDS_B)}

_CODE_RE = re.compile(r"^([0-9]{1,3})-([a-z]+)-([a-z]+)$")


@dataclass(frozen=True)
class TransferCode:
    channel: int
    word1: str
    word2: str

    def __post_init__(self) -> None:
        if not 1 <= self.channel <= 999:
            raise InvalidCodeError(f"channel must be 1..999, got {self.channel}")
        if self.word1 not in _INDEX_A:
            raise InvalidCodeError(f"unknown code word: {self.word1!r}")
        if self.word2 not in _INDEX_B:
            raise InvalidCodeError(f"unknown code word: {self.word2!r}")

    def render(self) -> str:
        return f"{self.channel}-{self.word1}-{self.word2}"

    __str__ = render

    def digest(self) -> bytes:
        return hashlib.sha256(self.render().encode("ascii")).digest()


def generate_code(rng=None) -> TransferCode:
    """Fresh unpredictable code: channel 1-999 plus one word from each list."""
    randbelow = rng.randrange if rng is not None else secrets.randbelow
    return TransferCode(
        channel=1 + randbelow(999),
        word1=WORDS_A[randbelow(256)],
        word2=WORDS_B[randbelow(256)],
    )


def parse_code(text: str) -> TransferCode:
    match = _CODE_RE.match(text)
    if not match:
        raise InvalidCodeError(
            f"transfer codes look like 66-antenna-transit, got {text!r}")
    return TransferCode(int(match.group(1)), match.group(2), match.group(3))


# --------------------------------------------------------------------------
# Framing
# --------------------------------------------------------------------------

def write_frame(sock: socket.socket, frame_type: int, payload: bytes = b"") -> None:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(f"frame payload exceeds {MAX_PAYLOAD} bytes")
    sock.sendall(_HEADER.pack(frame_type, len(payload)) + payload)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 16))
        if not chunk:
            raise TransferAbortedError("peer closed the connection mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    header = _recv_exact(sock, _HEADER.size)
    frame_type, length = _HEADER.unpack(header)
    if frame_type not in _FRAME_TYPES:
        raise ProtocolError(f"unknown frame type {frame_type}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"frame payload of {length} bytes exceeds {MAX_PAYLOAD}")
    return frame_type, _recv_exact(sock, length)


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not port.isdigit():
        raise ArtifactError(f"relay address must be host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


# --------------------------------------------------------------------------
# Relay
# --------------------------------------------------------------------------

@dataclass
class _Channel:
    sender: socket.socket
    paired: threading.Event
    receiver: socket.socket | None = None


class Relay:
    """Rendezvous relay pairing OPEN and CLAIM by code hash.

    Never persists payloads; drops a channel on DONE, ERROR, or either
    side disconnecting, making every code single-use. ``frame_log``
    (when given) collects every frame the relay reads, for tests that
    check what actually crossed the wire.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, *,
                 frame_log: list[tuple[int, bytes]] | None = None):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(16)
        self._channels: dict[bytes, _Channel] = {}
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self._thread: threading.Thread | None = None
        self.frame_log = frame_log

    @property
    def address(self) -> str:
        host, port = self._sock.getsockname()[:2]
        return f"{host}:{port}"

    def _read(self, sock: socket.socket) -> tuple[int, bytes]:
        frame = read_frame(sock)
        if self.frame_log is not None:
            self.frame_log.append(frame)
        return frame

    def start(self) -> "Relay":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def stop(self) -> None:
        self._stopping.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            channels = list(self._channels.values())
            self._channels.clear()
        for channel in channels:
            channel.sender.close()
            if channel.receiver is not None:
                channel.receiver.close()

    def __enter__(self) -> "Relay":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _handle(self, conn: socket.socket) -> None:
        conn.settimeout(DEFAULT_TIMEOUT)
        try:
            frame_type, payload = self._read(conn)
        except ArtifactError:
            conn.close()
            return
        if frame_type == OPEN:
            self._handle_open(conn, payload)
        elif frame_type == CLAIM:
            self._handle_claim(conn, payload)
        else:
            self._send_error(conn, "expected OPEN or CLAIM")
            conn.close()

    def _send_error(self, sock: socket.socket, reason: str) -> None:
        try:
            write_frame(sock, ERROR, reason.encode("utf-8"))
        except OSError:
            pass

    def _handle_open(self, conn: socket.socket, code_hash: bytes) -> None:
        channel = _Channel(sender=conn, paired=threading.Event())
        with self._lock:
            if code_hash in self._channels:
                self._send_error(conn, "channel already open for this code")
                conn.close()
                return
            self._channels[code_hash] = channel
        try:
            self._run_channel(code_hash, channel)
        finally:
            with self._lock:
                self._channels.pop(code_hash, None)
            conn.close()
            if channel.receiver is not None:
                channel.receiver.close()

    def _handle_claim(self, conn: socket.socket, code_hash: bytes) -> None:
        with self._lock:
            channel = self._channels.get(code_hash)
            if channel is None or channel.receiver is not None:
                claimed = None
            else:
                channel.receiver = conn
                claimed = channel
        if claimed is None:
            self._send_error(conn, "no such channel")
            conn.close()
            return
        claimed.paired.set()
        # The sender-side handler now owns both sockets.

    def _run_channel(self, code_hash: bytes, channel: _Channel) -> None:
        deadline = time.monotonic() + DEFAULT_TIMEOUT
        while not channel.paired.wait(timeout=0.25):
            if self._stopping.is_set() or time.monotonic() > deadline:
                self._send_error(channel.sender, "no receiver arrived in time")
                return
            # a sender that hung up frees the channel immediately
            readable, _, _ = select.select([channel.sender], [], [], 0)
            if readable:
                try:
                    if channel.sender.recv(1, socket.MSG_PEEK) == b"":
                        return
                except OSError:
                    return
        receiver = channel.receiver
        assert receiver is not None
        try:
            write_frame(channel.sender, ACCEPT)
            write_frame(receiver, ACCEPT)
        except OSError:
            self._send_error(channel.sender, "peer disconnected")
            self._send_error(receiver, "peer disconnected")
            return
        while True:
            try:
                frame_type, payload = self._read(channel.sender)
            except ArtifactError:
                self._send_error(receiver, "sender disconnected")
                return
            if frame_type not in (DATA, DONE):
                self._send_error(receiver, "sender protocol violation")
                self._send_error(channel.sender, "expected DATA or DONE")
                return
            try:
                write_frame(receiver, frame_type, payload)
            except OSError:
                self._send_error(channel.sender, "receiver disconnected")
                return
            if frame_type == DONE:
                try:
                    write_frame(channel.sender, DONE)
                except OSError:
                    pass
                return


def relay_serve(address: str = DEFAULT_RELAY_ADDRESS, *,
                frame_log: list[tuple[int, bytes]] | None = None) -> Relay:
    """Construct (but do not start) a relay bound to address."""
    host, port = parse_address(address)
    return Relay(host, port, frame_log=frame_log)


# --------------------------------------------------------------------------
# Sender / receiver clients
# --------------------------------------------------------------------------

def _connect(address: str, timeout: float) -> socket.socket:
    host, port = parse_address(address)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ArtifactError(f"cannot reach relay at {address}: {exc}") from exc
    sock.settimeout(timeout)
    return sock


@dataclass(frozen=True)
class SendResult:
    code: TransferCode
    bytes_sent: int
    sha256: str


def send(source: str | Path, relay_address: str = DEFAULT_RELAY_ADDRESS, *,
         code: TransferCode | None = None,
         timeout: float = DEFAULT_TIMEOUT,
         on_code: Callable[[str], None] | None = None,
         max_collision_retries: int = 8) -> SendResult:
    """Offer an artifact for pickup; blocks until the transfer completes.

    Directory sources are packed into a temporary serialization file first.
    ``on_code`` is invoked with the rendered one-time code as soon as the
    channel is open, so it can be shown to the receiving party.
    """
    source = Path(source)
    explicit_code = code is not None
    with tempfile.TemporaryDirectory(prefix="artifact-send-") as tmp:
        if source.is_dir():
            payload_file = Path(tmp) / archive.DEFAULT_ARCHIVE_NAME
            archive.pack(source, payload_file)
        else:
            payload_file = source
        digest = hashlib.sha256(payload_file.read_bytes()).digest()
        attempts = 0
        while True:
            attempts += 1
            current = code if explicit_code else generate_code()
            sock = _connect(relay_address, timeout)
            try:
                write_frame(sock, OPEN, current.digest())
                # A collision ERROR, if any, arrives promptly; otherwise the
                # channel is open and the code can be announced.
                sock.settimeout(0.25)
                early: tuple[int, bytes] | None
                try:
                    early = read_frame(sock)
                except (socket.timeout, TimeoutError):
                    early = None
                sock.settimeout(timeout)
                if early is not None and early[0] == ERROR:
                    payload = early[1]
                    if b"already open" in payload:
                        sock.close()
                        if explicit_code:
                            raise CollisionError(payload.decode("utf-8", "replace"))
                        if attempts > max_collision_retries:
                            raise CollisionError("could not find a free channel")
                        continue
                    raise TransferAbortedError(payload.decode("utf-8", "replace"))
                if on_code is not None:
                    on_code(current.render())
                return _send_stream(sock, payload_file, digest, current,
                                    early_accept=early, timeout=timeout)
            except BaseException:
                sock.close()
                raise


def _send_stream(sock: socket.socket, payload_file: Path, digest: bytes,
                 code: TransferCode, *, early_accept: tuple[int, bytes] | None,
                 timeout: float) -> SendResult:
    frame = early_accept
    if frame is None:
        try:
            frame = read_frame(sock)
        except TimeoutError:
            raise TransferAbortedError(
                f"no receiver claimed the channel within {timeout:.0f}s") from None
    frame_type, payload = frame
    if frame_type == ERROR:
        raise TransferAbortedError(payload.decode("utf-8", "replace"))
    if frame_type != ACCEPT:
        raise ProtocolError(f"expected ACCEPT from relay, got frame type {frame_type}")
    sent = 0
    try:
        with open(payload_file, "rb") as handle:
            while True:
                chunk = handle.read(MAX_PAYLOAD)
                if not chunk:
                    break
                write_frame(sock, DATA, chunk)
                sent += len(chunk)
        write_frame(sock, DONE, digest)
        frame_type, payload = read_frame(sock)
    except TimeoutError:
        raise TransferAbortedError("transfer timed out waiting for the relay") from None
    except OSError as exc:
        raise TransferAbortedError(f"connection lost mid-transfer: {exc}") from exc
    if frame_type == ERROR:
        raise TransferAbortedError(payload.decode("utf-8", "replace"))
    if frame_type != DONE:
        raise ProtocolError(f"expected delivery confirmation, got frame type {frame_type}")
    sock.close()
    return SendResult(code=code, bytes_sent=sent, sha256=digest.hex())


def receive(code: TransferCode | str, dest: str | Path,
            relay_address: str = DEFAULT_RELAY_ADDRESS, *,
            timeout: float = DEFAULT_TIMEOUT) -> Path:
    """Claim a one-time code and unpack the received artifact under dest."""
    if isinstance(code, str):
        code = parse_code(code)
    dest = Path(dest)
    sock = _connect(relay_address, timeout)
    hasher = hashlib.sha256()
    received = 0
    try:
        write_frame(sock, CLAIM, code.digest())
        try:
            frame_type, payload = read_frame(sock)
        except TimeoutError:
            raise TransferAbortedError("timed out waiting for the sender") from None
        if frame_type == ERROR:
            reason = payload.decode("utf-8", "replace")
            if "no such channel" in reason:
                raise NoSuchChannelError(reason)
            raise TransferAbortedError(reason)
        if frame_type != ACCEPT:
            raise ProtocolError(f"expected ACCEPT from relay, got frame type {frame_type}")
        with tempfile.NamedTemporaryFile(prefix="artifact-recv-", delete=False) as spool:
            spool_path = Path(spool.name)
            try:
                while True:
                    try:
                        frame_type, payload = read_frame(sock)
                    except TimeoutError:
                        raise TransferAbortedError(
                            "timed out waiting for transfer data") from None
                    if frame_type == DATA:
                        spool.write(payload)
                        hasher.update(payload)
                        received += len(payload)
                    elif frame_type == DONE:
                        break
                    elif frame_type == ERROR:
                        raise TransferAbortedError(payload.decode("utf-8", "replace"))
                    else:
                        raise ProtocolError(f"unexpected frame type {frame_type}")
                spool.flush()
                if hasher.digest() != payload:
                    raise IntegrityError(
                        "received data does not match the sender's digest")
            except BaseException:
                spool.close()
                spool_path.unlink(missing_ok=True)
                raise
        try:
            archive.unpack(spool_path, dest)
        finally:
            spool_path.unlink(missing_ok=True)
    finally:
        sock.close()
    return dest
