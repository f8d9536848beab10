"""Process plumbing shared by coordinator, provider and client.

A node owns one listener, one reader thread per open channel, and a single
inbox drained by one handler thread, so all of a node's state changes happen
on that handler thread.  Outbound traffic goes through a ``PeerPool`` that
keeps one connection per remote endpoint.
"""

from __future__ import annotations

import logging
import queue
import threading

from tda.errors import ChannelClosed, IoError, TDAError, Unreachable
from tda.transport import Channel, Endpoint, Message, RECONNECT_ATTEMPTS

log = logging.getLogger(__name__)

_STOP = object()


class PeerPool:
    """One long-lived outbound channel per endpoint, reconnecting on failure."""

    def __init__(self, network, on_channel=None, attempts: int = RECONNECT_ATTEMPTS):
        self.network = network
        self.on_channel = on_channel
        self.attempts = attempts
        self._lock = threading.Lock()
        self._locks: dict[Endpoint, threading.Lock] = {}
        self._channels: dict[Endpoint, Channel] = {}

    def _endpoint_lock(self, endpoint):
        with self._lock:
            return self._locks.setdefault(endpoint, threading.Lock())

    def _open(self, endpoint) -> Channel:
        ch = self._channels.get(endpoint)
        if ch is None:
            ch = self.network.connect(endpoint, attempts=self.attempts)
            self._channels[endpoint] = ch
            if self.on_channel is not None:
                self.on_channel(ch)
        return ch

    def ensure(self, endpoint: Endpoint) -> None:
        """Open (or reuse) the connection to ``endpoint``; raises ``Unreachable``."""
        with self._endpoint_lock(endpoint):
            self._open(endpoint)

    def send(self, endpoint: Endpoint, message: Message) -> None:
        with self._endpoint_lock(endpoint):
            ch = self._open(endpoint)
            try:
                ch.send(message)
                return
            except (ChannelClosed, IoError) as exc:
                log.debug("resending to %s after %s", endpoint, exc)
                self._channels.pop(endpoint, None)
                ch.close()
            ch = self._open(endpoint)
            try:
                ch.send(message)
            except (ChannelClosed, IoError) as exc:
                self._channels.pop(endpoint, None)
                ch.close()
                raise Unreachable(f"{endpoint}: {exc}") from None

    def drop(self, endpoint: Endpoint) -> None:
        with self._endpoint_lock(endpoint):
            ch = self._channels.pop(endpoint, None)
            if ch is not None:
                ch.close()

    def close(self) -> None:
        with self._lock:
            channels = list(self._channels.values())
            self._channels.clear()
        for ch in channels:
            ch.close()


class Node:
    """Listener + readers + one handler thread.  Subclasses implement ``handle``."""

    def __init__(self, node_id: str, network, listen: Endpoint):
        self.node_id = node_id
        self.network = network
        self.listener = network.listen(listen)
        self.endpoint = self.listener.endpoint
        self.inbox: queue.Queue = queue.Queue()
        self.peers = PeerPool(network, on_channel=self.attach)
        self._channels: set[Channel] = set()
        self._chan_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self.stopping = threading.Event()

    def _spawn(self, target, name, *args):
        t = threading.Thread(target=target, args=args, name=f"{self.node_id}-{name}", daemon=True)
        t.start()
        self._threads.append(t)
        return t

    def start(self):
        self._spawn(self._accept_loop, "accept")
        self._spawn(self._handle_loop, "handler")
        return self

    def attach(self, ch: Channel) -> None:
        with self._chan_lock:
            self._channels.add(ch)
        self._spawn(self._read_loop, "reader", ch)

    def _accept_loop(self):
        while not self.stopping.is_set():
            try:
                ch = self.listener.accept()
            except ChannelClosed:
                return
            self.attach(ch)

    def _read_loop(self, ch: Channel):
        try:
            while True:
                self.inbox.put((ch.receive(), ch))
        except (ChannelClosed, IoError):
            pass
        except TDAError as exc:
            log.warning("%s: dropping channel %s: %s", self.node_id, ch.peer, exc)
        finally:
            with self._chan_lock:
                self._channels.discard(ch)
            ch.close()

    def _handle_loop(self):
        while True:
            item = self.inbox.get()
            if item is _STOP:
                return
            msg, ch = item
            try:
                self.handle(msg, ch)
            except Exception:
                log.exception("%s: handler failed on %r", self.node_id, getattr(msg, "kind", msg))

    def handle(self, msg: Message, ch: Channel) -> None:
        raise NotImplementedError

    def reply(self, ch: Channel, payload, job_id: int = 0) -> None:
        try:
            ch.send(Message.of(payload, self.node_id, job_id))
        except (ChannelClosed, IoError) as exc:
            log.info("%s: reply to %s lost: %s", self.node_id, ch.peer, exc)

    def stop(self):
        if self.stopping.is_set():
            return
        self.stopping.set()
        self.listener.close()
        self.peers.close()
        with self._chan_lock:
            channels = list(self._channels)
        for ch in channels:
            ch.close()
        self.inbox.put(_STOP)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
