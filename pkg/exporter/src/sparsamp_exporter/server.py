"""Step-protocol server loop and command-line entry point.

One client per process. The server never samples and never sees the
message: it reports distributions, advances its context on each chosen
token, and ends the stream at EOS or when the step budget runs out.
"""

from __future__ import annotations

import argparse
import socket
import sys

from . import wire
from .model import CausalLMOracle


def serve(oracle: CausalLMOracle, recv_line, send_line, max_steps: int,
          model_id: str | None = None) -> None:
    send_line(
        wire.encode(
            wire.hello(oracle.vocab_size, model_id or oracle.model_id, oracle.eos_id)
        )
    )
    step = 0
    active = False
    last_ids: set[int] = set()

    def send_next() -> None:
        nonlocal step, last_ids
        if step >= max_steps:
            send_line(wire.encode(wire.eos()))
            last_ids = set()
            return
        try:
            ids, probs = oracle.next_distribution()
        except ValueError as exc:
            send_line(wire.encode(wire.error(str(exc))))
            last_ids = set()
            return
        send_line(wire.encode(wire.dist(step, ids, probs)))
        last_ids = {int(t) for t in ids}
        step += 1

    while True:
        line = recv_line()
        if not line:
            return
        obj = wire.decode(line)
        if obj is None:
            send_line(wire.encode(wire.error("undecodable envelope")))
            continue
        etype = obj.get("type")
        if etype == "reset":
            try:
                oracle.reset(obj.get("prompt"), obj.get("context"))
            except ValueError as exc:
                send_line(wire.encode(wire.error(str(exc))))
                continue
            step = 0
            active = True
            send_next()
        elif etype == "choose":
            token = obj.get("token_id")
            if not active or not last_ids:
                send_line(wire.encode(wire.error("choose before reset")))
            elif not isinstance(token, int) or token not in last_ids:
                send_line(wire.encode(wire.error(f"token {token!r} not in last dist")))
            else:
                oracle.advance(token)
                if oracle.eos_id is not None and token == oracle.eos_id:
                    send_line(wire.encode(wire.eos()))
                    last_ids = set()
                else:
                    send_next()
        else:
            send_line(wire.encode(wire.error(f"unexpected {etype!r} envelope")))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sparsamp-exporter",
        description="Serve a causal LM's next-token distributions over the "
        "step protocol (stdio by default).",
    )
    parser.add_argument("--model", required=True,
                        help="Hugging Face model id or local model directory.")
    parser.add_argument("--top-p", type=float, default=None)
    parser.add_argument("--top-k", type=int, default=None)
    parser.add_argument("--temperature", type=float, default=1.0)
    parser.add_argument("--max-steps", type=int, default=1024,
                        help="Serve at most this many steps per reset.")
    parser.add_argument("--model-id", default=None,
                        help="Override the model id reported in hello.")
    parser.add_argument("--tcp", type=int, default=None,
                        help="Listen on this TCP port instead of stdio.")
    args = parser.parse_args(argv)

    try:
        oracle = CausalLMOracle(
            args.model, top_p=args.top_p, top_k=args.top_k,
            temperature=args.temperature,
        )
    except Exception as exc:
        sys.stdout.buffer.write(wire.encode(wire.error(f"model load failed: {exc}")))
        sys.stdout.buffer.flush()
        return 1

    if args.tcp is None:
        stdout = sys.stdout.buffer

        def send(line: bytes) -> None:
            stdout.write(line)
            stdout.flush()

        serve(oracle, sys.stdin.buffer.readline, send, args.max_steps,
              args.model_id)
    else:
        with socket.create_server(("127.0.0.1", args.tcp)) as server:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("rb")
                serve(oracle, reader.readline, lambda line: conn.sendall(line),
                      args.max_steps, args.model_id)
    return 0


if __name__ == "__main__":
    sys.exit(main())
