"""Client and server plumbing for the model step protocol.

The client side (ModelEndpoint, ModelLinkSource) lets the codec treat any
external process as a distribution oracle over stdio or TCP. The server
loop (serve_source) turns any step source into such an oracle; the mock
CLI command uses it, and it doubles as the reference behavior any real
exporter must match. All codec arithmetic stays on the client: the server
only ever reports distributions and advances its context.
"""

from __future__ import annotations

import selectors
import socket
import subprocess
import time

from . import protocol
from .codec import Distribution, StepSource, build_distribution
from .errors import DistributionError, ProtocolError

DEFAULT_TIMEOUT = 10.0


class StdioTransport:
    """Line transport over a spawned subprocess's stdin/stdout."""

    def __init__(self, argv: list[str]):
        self.argv = argv
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as exc:
            raise ProtocolError(f"cannot spawn {argv!r}: {exc}") from exc
        self._buf = bytearray()
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)

    def send_line(self, line: bytes) -> None:
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ProtocolError(f"server {self.argv!r} closed its pipe") from exc

    def recv_line(self, timeout: float | None) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[: nl + 1])
                del self._buf[: nl + 1]
                return line
            remaining = None if deadline is None else deadline - time.monotonic()
            if remaining is not None and remaining <= 0:
                raise ProtocolError(f"timed out waiting for {self.argv!r}")
            if not self._sel.select(remaining):
                raise ProtocolError(f"timed out waiting for {self.argv!r}")
            chunk = self.proc.stdout.read1(65536)
            if not chunk:
                raise ProtocolError(f"server {self.argv!r} closed the stream")
            self._buf.extend(chunk)

    def close(self) -> None:
        self._sel.close()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class TcpTransport:
    """Line transport over a TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = f"{host}:{port}"
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ProtocolError(f"cannot connect to {self.endpoint}: {exc}") from exc
        self._buf = bytearray()

    def send_line(self, line: bytes) -> None:
        try:
            self.sock.sendall(line)
        except OSError as exc:
            raise ProtocolError(f"send to {self.endpoint} failed: {exc}") from exc

    def recv_line(self, timeout: float | None) -> bytes:
        self.sock.settimeout(timeout)
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[: nl + 1])
                del self._buf[: nl + 1]
                return line
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout as exc:
                raise ProtocolError(f"timed out waiting for {self.endpoint}") from exc
            except OSError as exc:
                raise ProtocolError(f"recv from {self.endpoint} failed: {exc}") from exc
            if not chunk:
                raise ProtocolError(f"{self.endpoint} closed the connection")
            self._buf.extend(chunk)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class ModelEndpoint:
    """One session against a step-protocol server.

    Strict request/response: reset and choose each owe exactly one reply,
    consumed by the following next_dist call.
    """

    def __init__(self, transport, timeout: float = DEFAULT_TIMEOUT):
        self.transport = transport
        self.timeout = timeout
        hello = protocol.decode(transport.recv_line(timeout))
        self.vocab_size, self.model_id, self.eos_id = protocol.parse_hello(hello)
        self._step = 0

    @classmethod
    def connect_command(cls, argv: list[str], timeout: float = DEFAULT_TIMEOUT):
        return cls(StdioTransport(argv), timeout)

    @classmethod
    def connect_tcp(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        return cls(TcpTransport(host, port, timeout), timeout)

    def reset(self, *, prompt=None, context=None, top_p=None, top_k=None) -> None:
        self._step = 0
        self.transport.send_line(
            protocol.encode(protocol.reset_envelope(prompt, context, top_p, top_k))
        )

    def next_dist(self) -> Distribution | None:
        obj = protocol.decode(self.transport.recv_line(self.timeout))
        etype = obj["type"]
        if etype == "eos":
            return None
        if etype == "error":
            raise ProtocolError(f"server error: {obj.get('message')!r}")
        if etype != "dist":
            raise ProtocolError(f"expected dist, got {etype!r}")
        ids, probs = protocol.parse_dist(obj, self.vocab_size, self._step)
        self._step += 1
        try:
            return build_distribution(ids, probs)
        except DistributionError as exc:
            raise ProtocolError(f"invalid distribution from server: {exc}") from exc

    def choose(self, token_id: int) -> None:
        self.transport.send_line(protocol.encode(protocol.choose_envelope(token_id)))

    def close(self) -> None:
        self.transport.close()


class ModelLinkSource:
    """StepSource adapter over a connected, reset endpoint."""

    def __init__(self, endpoint: ModelEndpoint):
        self.endpoint = endpoint
        self.eos_id = endpoint.eos_id

    def next_dist(self) -> Distribution | None:
        return self.endpoint.next_dist()

    def advance(self, token_id: int) -> None:
        self.endpoint.choose(token_id)


def serve_source(
    source_factory,
    recv_line,
    send_line,
    *,
    vocab_size: int,
    model_id: str = "mock",
    eos_id: int | None = None,
) -> None:
    """Serve step distributions until the client goes away.

    source_factory(reset_payload) -> StepSource builds a fresh stream per
    reset. The factory sees the whole reset envelope so ngram-backed mocks
    can seed context from the prompt; scripted mocks ignore it.
    """
    send_line(protocol.encode(protocol.hello_envelope(vocab_size, model_id, eos_id)))
    source: StepSource | None = None
    last_ids: set[int] | None = None
    step = 0

    def send_next() -> None:
        nonlocal step, last_ids
        dist = source.next_dist()
        if dist is None:
            send_line(protocol.encode({"type": "eos"}))
            last_ids = None
            return
        send_line(protocol.encode(protocol.dist_envelope(step, dist.ids, dist.probs)))
        last_ids = set(int(t) for t in dist.ids)
        step += 1

    while True:
        line = recv_line()
        if not line:
            return
        try:
            obj = protocol.decode(line)
        except ProtocolError as exc:
            send_line(protocol.encode(protocol.error_envelope(str(exc))))
            continue
        etype = obj["type"]
        if etype == "reset":
            source = source_factory(obj)
            step = 0
            send_next()
        elif etype == "choose":
            token = obj.get("token_id")
            if source is None or last_ids is None:
                send_line(protocol.encode(protocol.error_envelope("choose before reset")))
            elif not isinstance(token, int) or token not in last_ids:
                send_line(
                    protocol.encode(
                        protocol.error_envelope(f"token {token!r} not in last dist")
                    )
                )
            else:
                source.advance(token)
                send_next()
        else:
            send_line(
                protocol.encode(protocol.error_envelope(f"unexpected {etype} envelope"))
            )
