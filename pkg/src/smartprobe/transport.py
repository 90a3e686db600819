"""Datagram endpoints and the coroutine protocol the engine runs on.

Protocol roles are written as generators.  A generator yields

* ``Recv(deadline)`` -- wait for the next datagram or until ``deadline``
  (absolute time on the endpoint clock, ``None`` = forever); the yield
  evaluates to ``(data, peer, receive_time)`` or ``None`` on timeout;
* ``Grant(cost)`` -- ask for exclusive use of the server link before an
  operation of ``cost`` seconds;
* ``Release()`` -- hand the link back.

Outside a BCES, grants are immediate.  The same generator therefore runs
over real sockets (``run_process``), inside the simulator, and inside the
server's DRR-gated session table.
"""

from __future__ import annotations

import abc
import select
import socket
import time
from dataclasses import dataclass
from typing import Any, Generator, Hashable, Iterable, Optional

Datagram = tuple[bytes, Hashable, float]


@dataclass(frozen=True)
class Recv:
    deadline: Optional[float] = None


@dataclass(frozen=True)
class Grant:
    cost: float


@dataclass(frozen=True)
class Release:
    pass


Process = Generator[Any, Any, Any]


class DatagramEndpoint(abc.ABC):
    """send / receive / clock.  ``granularity`` documents the clock tick."""

    granularity: float = 0.0

    @abc.abstractmethod
    def send(self, data: bytes, peer: Hashable) -> None: ...

    def send_many(self, datagrams: Iterable[bytes], peer: Hashable) -> None:
        """Back-to-back sends; endpoints may override with a faster path."""
        for data in datagrams:
            self.send(data, peer)

    @abc.abstractmethod
    def receive(self, timeout: Optional[float]) -> Optional[Datagram]:
        """Next datagram, or None once ``timeout`` seconds have passed."""

    @abc.abstractmethod
    def now(self) -> float: ...


class UdpEndpoint(DatagramEndpoint):
    """Real UDP socket; timestamps come from ``time.monotonic``."""

    granularity = time.get_clock_info("monotonic").resolution

    def __init__(self, bind: tuple[str, int] = ("0.0.0.0", 0), rcvbuf: int = 4 << 20):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
        except OSError:
            pass
        self.sock.bind(bind)
        self.sock.setblocking(False)

    @property
    def address(self):
        return self.sock.getsockname()

    def send(self, data, peer):
        try:
            self.sock.sendto(data, peer)
        except (BlockingIOError, InterruptedError):
            # kernel queue full; behaves like a drop on the wire
            pass

    def receive(self, timeout):
        try:
            data, peer = self.sock.recvfrom(65535)
            return data, peer, time.monotonic()
        except BlockingIOError:
            pass
        ready, _, _ = select.select([self.sock], [], [], timeout)
        if not ready:
            return None
        try:
            data, peer = self.sock.recvfrom(65535)
        except BlockingIOError:
            return None
        return data, peer, time.monotonic()

    def now(self):
        return time.monotonic()

    def close(self):
        self.sock.close()


def run_process(proc: Process, endpoint: DatagramEndpoint):
    """Drive a protocol generator to completion on a blocking endpoint."""
    reply = None
    while True:
        try:
            request = proc.send(reply)
        except StopIteration as stop:
            return stop.value
        if isinstance(request, Recv):
            if request.deadline is None:
                timeout = None
            else:
                timeout = max(0.0, request.deadline - endpoint.now())
            reply = endpoint.receive(timeout)
            if reply is None and request.deadline is not None:
                # a receive() may return marginally early on coarse clocks
                while endpoint.now() < request.deadline:
                    reply = endpoint.receive(request.deadline - endpoint.now())
                    if reply is not None:
                        break
        else:
            reply = None
