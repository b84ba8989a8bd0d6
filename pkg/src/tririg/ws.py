"""Minimal WebSocket binding (RFC 6455) so a browser can speak the wire
format directly: each binary WebSocket message carries a chunk of the same
length-prefixed byte stream the raw TCP binding uses.

Server side accepts the HTTP upgrade and exchanges frames; a small client
side exists for tests.  Text frames, extensions and subprotocols are not
supported.  Control frames are handled inline (ping answered, close echoed).
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_HTTP_HEAD = 16 * 1024
_MAX_WS_FRAME = 16 * 1024 * 1024

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WSError(ConnectionError):
    pass


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WSError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def _apply_mask(data: bytes, key: bytes) -> bytes:
    if not data:
        return data
    rep = (key * (len(data) // 4 + 1))[:len(data)]
    x = int.from_bytes(data, "little") ^ int.from_bytes(rep, "little")
    return x.to_bytes(len(data), "little")


def encode_frame(opcode: int, payload: bytes, mask: bool = False) -> bytes:
    head = bytearray([0x80 | opcode])
    n = len(payload)
    mbit = 0x80 if mask else 0
    if n < 126:
        head.append(mbit | n)
    elif n < 65536:
        head.append(mbit | 126)
        head += struct.pack(">H", n)
    else:
        head.append(mbit | 127)
        head += struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        return bytes(head) + key + _apply_mask(payload, key)
    return bytes(head) + payload


class WSStream:
    """Blocking message-level wrapper over a connected socket.

    Client-to-server frames are masked as the RFC requires; server-to-client
    frames are not.  recv_binary() reassembles fragmented messages and
    returns b"" once the peer closes.
    """

    def __init__(self, sock: socket.socket, client_side: bool):
        self.sock = sock
        self.client_side = client_side
        self._closed = False

    # -- handshake ---------------------------------------------------------

    def handshake_server(self) -> None:
        head = bytearray()
        while b"\r\n\r\n" not in head:
            if len(head) > _MAX_HTTP_HEAD:
                raise WSError("oversized HTTP request")
            chunk = self.sock.recv(4096)
            if not chunk:
                raise WSError("connection closed during handshake")
            head.extend(chunk)
        try:
            text = bytes(head).split(b"\r\n\r\n", 1)[0].decode("latin-1")
            lines = text.split("\r\n")
            method = lines[0].split(" ")[0].upper()
            headers = {}
            for line in lines[1:]:
                name, _, value = line.partition(":")
                headers[name.strip().lower()] = value.strip()
        except Exception as exc:
            raise WSError(f"malformed HTTP request: {exc}") from None
        key = headers.get("sec-websocket-key", "")
        ok = (method == "GET"
              and "websocket" in headers.get("upgrade", "").lower()
              and "upgrade" in headers.get("connection", "").lower()
              and headers.get("sec-websocket-version") == "13"
              and key)
        if not ok:
            self.sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            raise WSError("not a WebSocket upgrade request")
        resp = ("HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n")
        self.sock.sendall(resp.encode("ascii"))

    def handshake_client(self, host: str, path: str = "/") -> None:
        key = base64.b64encode(os.urandom(16)).decode("ascii")
        req = (f"GET {path} HTTP/1.1\r\n"
               f"Host: {host}\r\n"
               "Upgrade: websocket\r\n"
               "Connection: Upgrade\r\n"
               f"Sec-WebSocket-Key: {key}\r\n"
               "Sec-WebSocket-Version: 13\r\n\r\n")
        self.sock.sendall(req.encode("ascii"))
        head = bytearray()
        while b"\r\n\r\n" not in head:
            if len(head) > _MAX_HTTP_HEAD:
                raise WSError("oversized HTTP response")
            chunk = self.sock.recv(4096)
            if not chunk:
                raise WSError("connection closed during handshake")
            head.extend(chunk)
        text = bytes(head).split(b"\r\n\r\n", 1)[0].decode("latin-1")
        first = text.split("\r\n", 1)[0]
        if " 101 " not in first + " ":
            raise WSError(f"upgrade refused: {first}")
        for line in text.split("\r\n")[1:]:
            name, _, value = line.partition(":")
            if name.strip().lower() == "sec-websocket-accept":
                if value.strip() != accept_key(key):
                    raise WSError("bad Sec-WebSocket-Accept")
                return
        raise WSError("missing Sec-WebSocket-Accept")

    # -- data --------------------------------------------------------------

    def send_binary(self, payload: bytes) -> None:
        self.sock.sendall(encode_frame(OP_BINARY, payload, mask=self.client_side))

    def _read_frame(self) -> tuple[bool, int, bytes]:
        b0, b1 = _read_exact(self.sock, 2)
        fin = bool(b0 & 0x80)
        if b0 & 0x70:
            raise WSError("reserved bits set (extensions unsupported)")
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        n = b1 & 0x7F
        if n == 126:
            (n,) = struct.unpack(">H", _read_exact(self.sock, 2))
        elif n == 127:
            (n,) = struct.unpack(">Q", _read_exact(self.sock, 8))
        if n > _MAX_WS_FRAME:
            raise WSError(f"frame too large: {n}")
        # the RFC requires client frames masked and server frames not
        if masked == self.client_side and opcode != OP_CLOSE:
            raise WSError("wrong masking for direction")
        key = _read_exact(self.sock, 4) if masked else b""
        payload = _read_exact(self.sock, n)
        if masked:
            payload = _apply_mask(payload, key)
        return fin, opcode, payload

    def recv_binary(self) -> bytes:
        """Next complete binary message; b"" after close or EOF."""
        fragments: list[bytes] = []
        while True:
            try:
                fin, opcode, payload = self._read_frame()
            except (WSError, OSError):
                return b""
            if opcode == OP_PING:
                if len(payload) > 125:
                    return b""
                try:
                    self.sock.sendall(encode_frame(OP_PONG, payload, self.client_side))
                except OSError:
                    return b""
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                self.close(echo=True)
                return b""
            if opcode == OP_TEXT:
                raise WSError("text frames unsupported")
            if opcode == OP_BINARY:
                if fragments:
                    raise WSError("new message before final fragment")
                if fin:
                    return payload
                fragments.append(payload)
            elif opcode == OP_CONT:
                if not fragments:
                    raise WSError("continuation without start")
                fragments.append(payload)
                if fin:
                    return b"".join(fragments)
            else:
                raise WSError(f"unsupported opcode {opcode}")

    def close(self, echo: bool = False) -> None:
        if not self._closed:
            self._closed = True
            try:
                code = struct.pack(">H", 1000)
                self.sock.sendall(encode_frame(OP_CLOSE, code, self.client_side))
            except OSError:
                pass
        if not echo:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()
