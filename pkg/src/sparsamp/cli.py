"""Operator commands: keygen, embed, extract, bench, ngram-train, trace,
mock-serve.

Exit codes: 0 ok, 2 parameter error, 3 internal consistency error,
4 extraction failure, 5 protocol error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import payload as payload_mod
from . import randomness
from .ambiguity import AmbiguitySignal
from .codec import DEFAULT_CHUNK_BITS, ExtractSession
from .codec import embed as embed_run
from .errors import (
    ConsistencyError,
    ExtractionFailure,
    ParameterError,
    ProtocolError,
    SparsampError,
    TraceFormatError,
)
from .modellink import ModelEndpoint, ModelLinkSource, serve_source
from .randomness import SeedKey
from .sources import (
    NGramModel,
    NGramSource,
    RecordingSource,
    SyntheticSpec,
    TraceSource,
    make_synthetic,
    ngram_train,
    trace_write,
)


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """uniform:V | zipf:V:EXPONENT | entropy:V:BITS"""
    parts = text.split(":")
    try:
        if parts[0] == "uniform" and len(parts) == 2:
            return SyntheticSpec("uniform", int(parts[1]))
        if parts[0] == "zipf" and len(parts) == 3:
            return SyntheticSpec("zipf", int(parts[1]), zipf_exponent=float(parts[2]))
        if parts[0] == "entropy" and len(parts) == 3:
            return SyntheticSpec(
                "entropy_target", int(parts[1]), target_entropy=float(parts[2])
            )
    except ValueError as exc:
        raise ParameterError(f"bad synthetic spec {text!r}: {exc}") from exc
    raise ParameterError(
        f"bad synthetic spec {text!r} (want uniform:V, zipf:V:S or entropy:V:BITS)"
    )


def _load_key(path: str, label: str) -> SeedKey:
    return SeedKey(
        randomness.parse_key(Path(path).read_text()), label.encode("utf-8")
    )


_source_options = [
    click.option("--synthetic", "synthetic_spec", default=None,
                 help="Synthetic source, e.g. zipf:50000:1.2 or entropy:256:6.0."),
    click.option("--ngram", "ngram_path", default=None, type=click.Path(exists=True),
                 help="Path to a trained n-gram model (JSON)."),
    click.option("--model-cmd", default=None,
                 help="Spawn a step-protocol server over stdio."),
    click.option("--model-tcp", default=None, help="host:port of a step server."),
    click.option("--prompt", default=None, help="Reset prompt for model sources."),
    click.option("--context-ids", default=None,
                 help="Comma-separated token-id context for model sources."),
    click.option("--context", default="", help="Seed context for n-gram sources."),
    click.option("--top-p", default=None, type=float),
    click.option("--top-k", default=None, type=int),
    click.option("--seed", default=0, type=int, show_default=True,
                 help="Seed for synthetic sources."),
    click.option("--max-steps", default=4096, type=int, show_default=True,
                 help="Step budget for synthetic/n-gram sources."),
]


def source_options(fn):
    for opt in reversed(_source_options):
        fn = opt(fn)
    return fn


def build_source(opts: dict):
    """Returns (source, detokenize-or-None, close-callable)."""
    chosen = [
        k for k in ("synthetic_spec", "ngram_path", "model_cmd", "model_tcp")
        if opts.get(k)
    ]
    if len(chosen) != 1:
        raise ParameterError(
            "choose exactly one of --synthetic, --ngram, --model-cmd, --model-tcp"
        )
    kind = chosen[0]
    if kind == "synthetic_spec":
        spec = parse_synthetic_spec(opts["synthetic_spec"])
        return make_synthetic(spec, opts["seed"], opts["max_steps"]), None, lambda: None
    if kind == "ngram_path":
        model = NGramModel.from_json(Path(opts["ngram_path"]).read_text())
        source = NGramSource(model, opts["context"], opts["max_steps"])
        return source, model.detokenize, lambda: None
    if kind == "model_cmd":
        endpoint = ModelEndpoint.connect_command(opts["model_cmd"].split())
    else:
        host, _, port = opts["model_tcp"].rpartition(":")
        try:
            endpoint = ModelEndpoint.connect_tcp(host, int(port))
        except ValueError as exc:
            raise ParameterError(f"bad --model-tcp {opts['model_tcp']!r}") from exc
    context = None
    if opts.get("context_ids"):
        try:
            context = [int(t) for t in opts["context_ids"].split(",")]
        except ValueError as exc:
            raise ParameterError(f"bad --context-ids: {exc}") from exc
    endpoint.reset(
        prompt=opts.get("prompt"), context=context,
        top_p=opts.get("top_p"), top_k=opts.get("top_k"),
    )
    return ModelLinkSource(endpoint), None, endpoint.close


@click.group()
def cli():
    """Steganographic codec over generative-model token streams."""


@cli.command()
@click.option("--out", type=click.Path(), default=None, help="Key file path.")
def keygen(out):
    """Generate a fresh 32-byte key (64 hex chars)."""
    text = randomness.format_key(randomness.generate_key())
    if out:
        Path(out).write_text(text)
    else:
        click.echo(text, nl=False)


def _write_tokens(path, tokens, lm, complete, text, state_blob):
    doc = {"lm": lm, "tokens": tokens, "complete": complete}
    if text is not None:
        doc["text"] = text
    if state_blob is not None:
        doc["state"] = state_blob.hex()
    Path(path).write_text(json.dumps(doc))


def _read_tokens(path) -> list[int]:
    doc = json.loads(Path(path).read_text())
    tokens = doc["tokens"] if isinstance(doc, dict) else doc
    if not isinstance(tokens, list) or any(not isinstance(t, int) for t in tokens):
        raise ParameterError(f"{path} does not hold a token-id list")
    return tokens


@cli.command()
@click.option("--key", required=True, envvar="SPARSAMP_KEY", type=click.Path(exists=True))
@click.option("--label", default="", help="Stream label (domain separation).")
@click.option("--lm", default=DEFAULT_CHUNK_BITS, type=int, show_default=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--whiten", is_flag=True, help="XOR payload with a keyed stream.")
@source_options
def embed(key, label, lm, in_path, out_path, whiten, **opts):
    """Embed a payload file into a generated token stream."""
    seed_key = _load_key(key, label)
    data = Path(in_path).read_bytes()
    bits = payload_mod.encode_payload(data, lm, seed_key, whiten)
    source, detok, close = build_source(opts)
    try:
        result = embed_run(bits, lm, seed_key, source)
    finally:
        close()
    session = result.session
    text = detok(result.tokens) if detok else None
    state = None if session.message_done else session.save_state()
    _write_tokens(out_path, result.tokens, lm, session.message_done, text, state)
    if not session.message_done:
        click.echo(
            f"warning: source ended with message incomplete "
            f"({session.chunks_consumed} chunks consumed); state saved",
            err=True,
        )


def _extract_envelope(tokens, lm, seed_key, source) -> bytes:
    """Drive extraction only as far as the envelope requires."""
    session = ExtractSession(seed_key, lm)
    bits = []
    have = 0
    needed = None
    for token in tokens:
        dist = source.next_dist()
        if dist is None:
            break
        chunk = session.step(dist, token)
        source.advance(token)
        if chunk is None:
            continue
        bits.append(chunk)
        have += len(chunk)
        if needed is None and have >= payload_mod.HEADER_BITS:
            needed = payload_mod.peek_length("".join(bits))
        if needed is not None and have >= needed:
            break
    return payload_mod.decode_payload("".join(bits), seed_key)


@cli.command()
@click.option("--key", required=True, envvar="SPARSAMP_KEY", type=click.Path(exists=True))
@click.option("--label", default="")
@click.option("--lm", default=DEFAULT_CHUNK_BITS, type=int, show_default=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@source_options
def extract(key, label, lm, in_path, out_path, **opts):
    """Recover a payload from a token stream."""
    seed_key = _load_key(key, label)
    tokens = _read_tokens(in_path)
    source, _, close = build_source(opts)
    try:
        data = _extract_envelope(tokens, lm, seed_key, source)
    finally:
        close()
    Path(out_path).write_bytes(data)


@cli.command(name="ngram-train")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--n", "order", default=3, type=int, show_default=True)
@click.option("--alpha", default=0.5, type=float, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def ngram_train_cmd(in_path, order, alpha, out_path):
    """Train a character n-gram model on a text corpus."""
    model = ngram_train(Path(in_path).read_text(), order, alpha)
    Path(out_path).write_text(model.to_json())
    click.echo(
        f"trained order-{order} model, alphabet size {len(model.alphabet)}, "
        f"{len(model.counts)} contexts"
    )


@cli.group()
def trace():
    """Record and replay byte-exact distribution traces."""


@trace.command(name="record")
@click.option("--key", required=True, envvar="SPARSAMP_KEY", type=click.Path(exists=True))
@click.option("--label", default="")
@click.option("--lm", default=DEFAULT_CHUNK_BITS, type=int, show_default=True)
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--trace-out", required=True, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--trace-label", default="")
@source_options
def trace_record(key, label, lm, in_path, trace_out, out_path, trace_label, **opts):
    """Embed while recording every step distribution and chosen token."""
    seed_key = _load_key(key, label)
    bits = payload_mod.encode_payload(Path(in_path).read_bytes(), lm, seed_key)
    inner, detok, close = build_source(opts)
    recorder = RecordingSource(inner)
    try:
        result = embed_run(bits, lm, seed_key, recorder)
    finally:
        close()
    vocab_size = max((int(s.ids.max()) for s in recorder.steps), default=0) + 1
    Path(trace_out).write_bytes(trace_write(recorder.steps, vocab_size, trace_label))
    if out_path:
        session = result.session
        text = detok(result.tokens) if detok else None
        _write_tokens(out_path, result.tokens, lm, session.message_done, text, None)
    click.echo(f"recorded {len(recorder.steps)} steps")


@trace.command(name="replay")
@click.option("--key", required=True, envvar="SPARSAMP_KEY", type=click.Path(exists=True))
@click.option("--label", default="")
@click.option("--lm", default=DEFAULT_CHUNK_BITS, type=int, show_default=True)
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def trace_replay(key, label, lm, trace_path, out_path):
    """Extract a payload from a recorded trace."""
    seed_key = _load_key(key, label)
    source = TraceSource.from_bytes(Path(trace_path).read_bytes())
    data = _extract_envelope(source.chosen_tokens, lm, seed_key, source)
    Path(out_path).write_bytes(data)


@cli.command(name="mock-serve")
@click.option("--tcp", "tcp_port", default=None, type=int,
              help="Listen on a TCP port instead of stdio.")
@click.option("--model-id", default="mock")
@click.option("--eos-id", default=None, type=int)
@source_options
def mock_serve(tcp_port, model_id, eos_id, **opts):
    """Serve scripted step distributions over the wire protocol."""
    if opts.get("model_cmd") or opts.get("model_tcp"):
        raise ParameterError("mock-serve needs a --synthetic, --ngram or trace source")

    def factory(reset_obj):
        if opts.get("synthetic_spec"):
            spec = parse_synthetic_spec(opts["synthetic_spec"])
            return make_synthetic(spec, opts["seed"], opts["max_steps"])
        model = NGramModel.from_json(Path(opts["ngram_path"]).read_text())
        context = reset_obj.get("prompt") or opts["context"]
        return NGramSource(model, context, opts["max_steps"])

    if opts.get("synthetic_spec"):
        vocab_size = parse_synthetic_spec(opts["synthetic_spec"]).vocab_size
    elif opts.get("ngram_path"):
        vocab_size = len(
            NGramModel.from_json(Path(opts["ngram_path"]).read_text()).alphabet
        )
    else:
        raise ParameterError("mock-serve needs --synthetic or --ngram")

    if tcp_port is None:
        stdin = sys.stdin.buffer
        stdout = sys.stdout.buffer

        def send(line: bytes):
            stdout.write(line)
            stdout.flush()

        serve_source(factory, stdin.readline, send,
                     vocab_size=vocab_size, model_id=model_id, eos_id=eos_id)
    else:
        import socket

        with socket.create_server(("127.0.0.1", tcp_port)) as server:
            conn, _ = server.accept()
            with conn:
                reader = conn.makefile("rb")
                serve_source(
                    factory, reader.readline,
                    lambda line: conn.sendall(line),
                    vocab_size=vocab_size, model_id=model_id, eos_id=eos_id,
                )


@cli.command()
@click.option("--vocab", default=50_257, type=int, show_default=True)
@click.option("--lm", default=DEFAULT_CHUNK_BITS, type=int, show_default=True)
@click.option("--iterations", default=2_000, type=int, show_default=True)
@click.option("--runs", default=10, type=int, show_default=True,
              help="Runs per chunk length in the utilization sweep.")
@click.option("--skip-kernels", is_flag=True)
@click.option("--json", "json_path", default=None, type=click.Path())
def bench(vocab, lm, iterations, runs, skip_kernels, json_path):
    """Timing, utilization and kernel benchmarks."""
    from . import metrics
    from .bench import utilization_sweep

    record: dict = {}

    overhead = metrics.measure_overhead(vocab, lm, iterations)
    record["overhead"] = overhead
    click.echo(f"timing at vocab={vocab}, lm={lm} ({iterations} iterations):")
    click.echo(f"  plain sample     {overhead['plain_sample_ns'] / 1e3:8.2f} us")
    click.echo(f"  embed step       {overhead['embed_step_ns'] / 1e3:8.2f} us")
    click.echo(f"  embed/plain      {overhead['embed_over_plain']:8.2f}x")
    click.echo(f"  sparse-update spread over lm:    {overhead['sparse_lm_ratio']:.2f}x")
    click.echo(f"  sparse-update spread over vocab: {overhead['sparse_vocab_ratio']:.2f}x")

    sweep = utilization_sweep(runs=runs)
    record["utilization"] = sweep
    click.echo("\nmean utilization on ~6 bit/step synthetic streams:")
    for row in sweep:
        click.echo(f"  lm={row['lm']:<5} {row['mean_utilization'] * 100:6.1f}%")

    if not skip_kernels:
        kernels = metrics.kernel_benchmark(vocab_size=vocab)
        record["kernels"] = kernels
        click.echo(f"\nkernel paths (active: {kernels['active']}):")
        for name, row in kernels["paths"].items():
            click.echo(
                f"  {name:<6} sample_index {row['sample_index_ns']:8.0f} ns   "
                f"grid histogram (16-bit) {row['grid_histogram_16bit_ns'] / 1e6:8.2f} ms"
            )

    if json_path:
        Path(json_path).write_text(json.dumps(record, indent=2))


def main(argv=None):
    try:
        cli(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except (ParameterError, TraceFormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except ConsistencyError as exc:
        click.echo(f"internal consistency error: {exc}", err=True)
        sys.exit(3)
    except (ExtractionFailure, AmbiguitySignal) as exc:
        click.echo(f"extraction failed: {exc}", err=True)
        sys.exit(4)
    except ProtocolError as exc:
        click.echo(f"protocol error: {exc}", err=True)
        sys.exit(5)
    except SparsampError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    sys.exit(0)


if __name__ == "__main__":
    main()
