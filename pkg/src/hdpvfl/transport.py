"""Channels connecting the two parties.

Wire format, one frame per message::

    +----------------------+-------------------------------+
    | length: uint32, LE   | payload: UTF-8 JSON, `length` |
    +----------------------+-------------------------------+

Payloads are compact JSON with sorted keys. Floats are written with
Python's shortest round-trip repr, so decoding gives back the exact
double; NaN and infinities are refused at encode time.

The in-process channel pushes the same encoded payloads through a pair of
queues, so both transports accept and reject exactly the same messages.
"""
from __future__ import annotations

import io
import json
import queue
import socket
import struct
import threading
import time
from typing import Optional

import numpy as np

from .errors import (ChannelClosedError, DecodeError, EncodeError, InputError,
                     TransportError, TruncationError)
from .glm import LossSpec, PenaltySpec
from .messages import Done, IrA, IrB, Message, Setup
from .privacy import Hyperparams

MAX_FRAME_BYTES = 64 * 1024 * 1024
_HEADER = struct.Struct("<I")


def _reject_constant(name):
    raise ValueError(f"non-finite constant {name} not allowed")


def _message_to_obj(msg: Message) -> dict:
    if isinstance(msg, Setup):
        return {"type": "Setup", "hyperparams": msg.hyperparams.to_dict(),
                "loss": msg.loss.to_dict(), "penalty": msg.penalty.to_dict(),
                "n": int(msg.n), "d_a": int(msg.d_a),
                "d_b": None if msg.d_b is None else int(msg.d_b)}
    if isinstance(msg, (IrB, IrA)):
        return {"type": type(msg).__name__, "t": int(msg.t),
                "values": [float(v) for v in msg.values]}
    if isinstance(msg, Done):
        return {"type": "Done", "metrics": msg.metrics}
    raise EncodeError(f"not a protocol message: {type(msg).__name__}")


def encode_message(msg: Message) -> bytes:
    obj = _message_to_obj(msg)
    try:
        text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise EncodeError(f"cannot encode {obj['type']}: {exc}") from exc
    payload = text.encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise EncodeError(f"payload of {len(payload)} bytes exceeds the frame limit")
    return payload


def _obj_to_message(obj) -> Message:
    if not isinstance(obj, dict):
        raise ValueError("payload is not a JSON object")
    kind = obj.get("type")
    if kind == "Setup":
        return Setup(hyperparams=Hyperparams.from_dict(obj["hyperparams"]),
                     loss=LossSpec.from_dict(obj["loss"]),
                     penalty=PenaltySpec.from_dict(obj["penalty"]),
                     n=int(obj["n"]), d_a=int(obj["d_a"]),
                     d_b=None if obj["d_b"] is None else int(obj["d_b"]))
    if kind in ("IrB", "IrA"):
        t, values = obj["t"], obj["values"]
        if not isinstance(t, int) or not isinstance(values, list):
            raise ValueError(f"malformed {kind} fields")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            raise ValueError(f"{kind} values must be numbers")
        cls = IrB if kind == "IrB" else IrA
        return cls(t=t, values=np.array(values, dtype=float))
    if kind == "Done":
        metrics = obj["metrics"]
        if not isinstance(metrics, dict):
            raise ValueError("Done metrics must be an object")
        return Done(metrics=metrics)
    raise ValueError(f"unknown message type {kind!r}")


def decode_message(payload: bytes, offset: int = 0) -> Message:
    """Inverse of :func:`encode_message`.

    ``offset`` is the stream position of the payload's first byte; decode
    errors report the absolute offset of the offending byte.
    """
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError(f"invalid UTF-8: {exc.reason}", offset + exc.start) from exc
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        pos = len(text[:exc.pos].encode("utf-8"))
        raise DecodeError(f"malformed JSON: {exc.msg}", offset + pos) from exc
    except ValueError as exc:
        raise DecodeError(str(exc), offset) from exc
    try:
        return _obj_to_message(obj)
    except (KeyError, TypeError, ValueError, InputError) as exc:
        raise DecodeError(f"invalid message: {exc!r}", offset) from exc


def encode_frame(msg: Message) -> bytes:
    payload = encode_message(msg)
    return _HEADER.pack(len(payload)) + payload


def _read_exact(stream, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            break
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(stream, offset: int = 0) -> Optional[bytes]:
    """Read one frame's payload from a binary stream.

    Returns ``None`` on a clean end of stream (no bytes of a new frame).
    """
    header = _read_exact(stream, _HEADER.size)
    if not header:
        return None
    if len(header) < _HEADER.size:
        raise TruncationError(f"stream ended inside a frame header at byte offset {offset + len(header)}")
    (length,) = _HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise DecodeError(f"frame length {length} exceeds the {MAX_FRAME_BYTES}-byte limit", offset)
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise TruncationError(
            f"stream ended after {len(payload)} of {length} payload bytes "
            f"(frame at byte offset {offset})")
    return payload


def read_messages(data: bytes) -> list:
    """Decode every frame in a byte string; convenient for golden files."""
    stream, offset, out = io.BytesIO(data), 0, []
    while (payload := read_frame(stream, offset)) is not None:
        out.append(decode_message(payload, offset + _HEADER.size))
        offset += _HEADER.size + len(payload)
    return out


_EOF = object()


class InProcessChannel:
    """One endpoint of a paired, in-memory channel.

    Create both ends with :meth:`pair`. ``recv`` blocks until a message or
    the peer's close arrives; ``timeout`` (seconds) bounds the wait.
    """

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: Optional[float] = None):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False
        self._peer_closed = False
        self.timeout = timeout

    @classmethod
    def pair(cls, timeout: Optional[float] = None) -> tuple["InProcessChannel", "InProcessChannel"]:
        a_to_b, b_to_a = queue.Queue(), queue.Queue()
        return cls(b_to_a, a_to_b, timeout), cls(a_to_b, b_to_a, timeout)

    def send(self, msg: Message) -> None:
        if self._closed:
            raise ChannelClosedError("send on a closed channel")
        if self._peer_closed:
            raise ChannelClosedError("peer has closed the channel")
        self._outbox.put(encode_message(msg))

    def recv(self) -> Optional[Message]:
        if self._closed:
            raise ChannelClosedError("recv on a closed channel")
        if self._peer_closed:
            return None
        try:
            item = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(f"no message within {self.timeout} s") from None
        if item is _EOF:
            self._peer_closed = True
            return None
        return decode_message(item)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_EOF)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SocketChannel:
    """Framed channel over a connected stream socket."""

    def __init__(self, sock: socket.socket, timeout: Optional[float] = None):
        sock.settimeout(timeout)
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self._offset = 0
        self._closed = False

    def send(self, msg: Message) -> None:
        if self._closed:
            raise ChannelClosedError("send on a closed channel")
        frame = encode_frame(msg)
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv(self) -> Optional[Message]:
        if self._closed:
            raise ChannelClosedError("recv on a closed channel")
        start = self._offset
        try:
            payload = read_frame(self._rfile, start)
        except TransportError:
            raise
        except OSError as exc:
            raise TransportError(f"recv failed: {exc}") from exc
        if payload is None:
            return None
        self._offset += _HEADER.size + len(payload)
        return decode_message(payload, start + _HEADER.size)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._rfile.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise InputError(f"address must look like host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


class Listener:
    """Passive-side TCP listener accepting a single training session."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()[:2]

    def accept(self, timeout: Optional[float] = None) -> SocketChannel:
        self._server.settimeout(timeout)
        try:
            conn, _ = self._server.accept()
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        finally:
            self._server.close()
        return SocketChannel(conn, timeout)

    def close(self) -> None:
        self._server.close()


def connect(host: str, port: int, timeout: Optional[float] = None,
            retry_for: float = 0.0) -> SocketChannel:
    """Active-side connect; keeps retrying for ``retry_for`` seconds."""
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return SocketChannel(sock, timeout)
        except OSError as exc:
            if time.monotonic() >= deadline:
                raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
            time.sleep(0.05)


def tcp_pair(timeout: Optional[float] = None) -> tuple[SocketChannel, SocketChannel]:
    """A connected (active, passive) pair over loopback TCP."""
    listener = Listener("127.0.0.1", 0)
    active = connect(*listener.address, timeout=timeout)
    passive = listener.accept(timeout)
    return active, passive


class RecordingChannel:
    """Wraps an endpoint and appends every sent message to a shared transcript.

    Messages are recorded before they are handed to the transport, so the
    transcript order matches the order the peer can observe.
    """

    def __init__(self, inner, transcript: list, role: str, lock: Optional[threading.Lock] = None):
        self._inner = inner
        self.transcript = transcript
        self.role = role
        self._lock = lock or threading.Lock()

    @classmethod
    def wrap_pair(cls, active, passive):
        transcript, lock = [], threading.Lock()
        return cls(active, transcript, "active", lock), cls(passive, transcript, "passive", lock), transcript

    def send(self, msg: Message) -> None:
        with self._lock:
            self.transcript.append((self.role, msg))
        self._inner.send(msg)

    def recv(self) -> Optional[Message]:
        return self._inner.recv()

    def close(self) -> None:
        self._inner.close()
