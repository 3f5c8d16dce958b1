"""TCP fabric: the same matching semantics as loopback, over real sockets.

All ranks live in the calling process.  One duplex connection is
established per peer pair, eagerly at startup, from a roster mapping each
rank to host:port (one ``rank host:port`` line per rank, in order).  When
no roster is given, ephemeral ports on 127.0.0.1 are assigned.

A send completes when its frame has been fully handed to the socket.
Self-sends never touch a socket and are delivered locally.
"""

from __future__ import annotations

import socket
from collections import deque

from .errors import ConnectionLost, RosterError
from .transport import Endpoint, _Msg
from .wire import FrameDecoder, encode_frame

_CHUNK = 65536


def parse_roster(text: str, world_size: int) -> list[tuple[str, int]]:
    """Parse roster lines into (host, port) pairs indexed by rank."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or ":" not in parts[1]:
            raise RosterError(f"roster line {lineno}: expected 'rank host:port'")
        try:
            rank = int(parts[0])
        except ValueError:
            raise RosterError(f"roster line {lineno}: bad rank {parts[0]!r}") from None
        host, _, port = parts[1].rpartition(":")
        try:
            entries.append((rank, host, int(port)))
        except ValueError:
            raise RosterError(f"roster line {lineno}: bad port {port!r}") from None
    if [r for r, _, _ in entries] != list(range(world_size)):
        raise RosterError(f"roster must list ranks 0..{world_size - 1} in order")
    return [(host, port) for _, host, port in entries]


def format_roster(addrs: list[tuple[str, int]]) -> str:
    return "".join(f"{rank} {host}:{port}\n" for rank, (host, port) in enumerate(addrs))


class _Conn:
    __slots__ = ("sock", "decoder", "outbox", "peer")

    def __init__(self, sock, peer):
        self.sock = sock
        self.peer = peer
        self.decoder = FrameDecoder()
        # Entries of (buffer, offset, send_op); ops complete once their
        # buffer is fully written.
        self.outbox = deque()


class TcpFabric:
    """All endpoints of one world, connected by a full socket mesh."""

    def __init__(self, world_size: int, roster: list[tuple[str, int]] | None = None):
        self.world_size = world_size
        self.endpoints = [Endpoint(r, world_size, self) for r in range(world_size)]
        self._conns: list[dict[int, _Conn]] = [dict() for _ in range(world_size)]
        self._listeners = []
        self._connect_mesh(roster)

    def _connect_mesh(self, roster):
        listeners = {}
        addrs = []
        for rank in range(self.world_size):
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            if roster is None:
                srv.bind(("127.0.0.1", 0))
            else:
                srv.bind(roster[rank])
            srv.listen(self.world_size)
            listeners[rank] = srv
            addrs.append(srv.getsockname())
            self._listeners.append(srv)
        # Higher rank dials lower rank; a 4-byte hello identifies the dialer.
        for hi in range(self.world_size):
            for lo in range(hi):
                cli = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                cli.connect(addrs[lo])
                cli.sendall(hi.to_bytes(4, "little"))
                acc, _ = listeners[lo].accept()
                hello = self._read_exact(acc, 4)
                dialer = int.from_bytes(hello, "little")
                self._register(lo, dialer, acc)
                self._register(hi, lo, cli)

    @staticmethod
    def _read_exact(sock, n):
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionLost("peer closed during handshake")
            buf += chunk
        return buf

    def _register(self, rank, peer, sock):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.setblocking(False)
        self._conns[rank][peer] = _Conn(sock, peer)

    def poll(self, ep: Endpoint):
        completed: list = []
        events: list = []
        with ep._lock:
            outs = list(ep._out)
            ep._out.clear()
        for sop in outs:
            if sop.peer == ep.rank:
                msg = _Msg(ep.rank, sop.tag, sop.payload)
                with ep._lock:
                    ep._arrival(msg, completed, events)
                    ep._finish_send(sop, completed, events)
            else:
                conn = self._conns[ep.rank][sop.peer]
                conn.outbox.append([encode_frame(ep.rank, sop.tag, sop.payload), 0, sop])
        for conn in self._conns[ep.rank].values():
            self._flush(ep, conn, completed, events)
            self._read(ep, conn, completed, events)
        return completed, events

    def _flush(self, ep, conn, completed, events):
        while conn.outbox:
            entry = conn.outbox[0]
            buf, off, sop = entry
            try:
                n = conn.sock.send(buf[off:])
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                raise ConnectionLost(f"send to rank {conn.peer} failed: {exc}") from exc
            entry[1] = off + n
            if entry[1] < len(buf):
                return
            conn.outbox.popleft()
            with ep._lock:
                ep._finish_send(sop, completed, events)

    def _read(self, ep, conn, completed, events):
        while True:
            try:
                data = conn.sock.recv(_CHUNK)
            except (BlockingIOError, InterruptedError):
                return
            except OSError as exc:
                raise ConnectionLost(f"recv from rank {conn.peer} failed: {exc}") from exc
            if data == b"":
                raise ConnectionLost(f"rank {conn.peer} closed the connection")
            for source, tag, payload in conn.decoder.feed(data):
                msg = _Msg(source, tag, payload)
                with ep._lock:
                    ep._arrival(msg, completed, events)

    def close(self):
        for conns in self._conns:
            for conn in conns.values():
                try:
                    conn.sock.close()
                except OSError:
                    pass
        for srv in self._listeners:
            try:
                srv.close()
            except OSError:
                pass
