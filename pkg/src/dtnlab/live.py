"""Live-mode node: an :class:`~dtnlab.agent.Agent` behind real TCP adapters.

Each inbound connection gets a reader thread that only deframes; all agent
work happens on one worker thread fed by a queue, matching the agent's
single-threaded contract.  Contacts to configured neighbours are treated as
permanently open.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Callable, Dict, Optional, Tuple

from .agent import Agent, Disposition, NodeConfig
from .channel import TcpLink, parse_addr
from .errors import BadFrame, LinkDown
from .model import Bundle

log = logging.getLogger(__name__)

# 2000-01-01T00:00:00Z as a Unix timestamp
EPOCH_2000 = 946_684_800


def utc_now() -> float:
    """Seconds since 2000-01-01 UTC from the host clock."""
    return time.time() - EPOCH_2000


class LiveNode:
    def __init__(self, config: NodeConfig, listen: Tuple[str, int],
                 on_deliver: Optional[Callable[[Bundle], None]] = None):
        self.config = config
        self._t0 = time.monotonic()
        self.agent = Agent(config, start_utc=utc_now())
        self.on_deliver = on_deliver
        self.inbox: "queue.Queue" = queue.Queue()
        self._links: Dict[str, TcpLink] = {}
        self._stop = threading.Event()
        self.server = socket.create_server(listen, reuse_port=False)
        self.address = self.server.getsockname()[:2]
        self.dispositions: Dict[str, int] = {}

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    # -- threads -------------------------------------------------------------------

    def start(self) -> "LiveNode":
        threading.Thread(target=self._accept_loop, daemon=True, name="accept").start()
        threading.Thread(target=self._worker, daemon=True, name="agent").start()
        return self

    def stop(self):
        self._stop.set()
        self.inbox.put(None)
        try:
            self.server.close()
        except OSError:
            pass
        for link in self._links.values():
            link.close()

    def serve_forever(self):
        self.start()
        try:
            while not self._stop.wait(0.5):
                pass
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, peer = self.server.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(TcpLink(sock), peer),
                             daemon=True, name=f"rx-{peer}").start()

    def _reader(self, link: TcpLink, peer):
        while not self._stop.is_set():
            try:
                image = link.recv()
            except LinkDown:
                break
            except BadFrame as exc:
                log.warning("%s: bad frame from %s: %s", self.config.node_id, peer, exc)
                break
            self.inbox.put(image)
        link.close()

    def _worker(self):
        while True:
            image = self.inbox.get()
            if image is None:
                return
            try:
                self._handle(image)
            except Exception:  # keep the node alive; one bad bundle must not kill it
                log.exception("%s: error handling bundle", self.config.node_id)

    # -- agent glue ------------------------------------------------------------------

    def _handle(self, image: bytes):
        now = self.now_ms()
        disp, bundle = self.agent.receive_image(image, now)
        self.dispositions[disp.value] = self.dispositions.get(disp.value, 0) + 1
        ident = ":".join(map(str, bundle.bundle_id)) if bundle else "?"
        log.info("%s: %s %s (%d bytes)", self.config.node_id, disp.value, ident, len(image))
        if disp is Disposition.DELIVERED and self.on_deliver is not None:
            self.on_deliver(bundle)
        elif disp is Disposition.QUEUED:
            self._forward(now)

    def _forward(self, now: int):
        result = self.agent.dispatch(now, set(self.config.neighbors))
        for tag, disp, _ in result.drops:
            log.info("%s: %s at dispatch", self.config.node_id, disp.value)
        for tx in result.transmissions:
            try:
                self._link(tx.next_hop).send(tx.image)
            except LinkDown as exc:
                self._links.pop(tx.next_hop, None)
                log.error("%s: cannot forward to %s: %s", self.config.node_id, tx.next_hop, exc)

    def _link(self, hop: str) -> TcpLink:
        link = self._links.get(hop)
        if link is None or not link.up:
            host, port = parse_addr(self.config.neighbors[hop])
            link = self._links[hop] = TcpLink.connect(host, port)
        return link
