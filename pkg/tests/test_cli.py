import json
import sys
from pathlib import Path

import pytest

from sparsamp.cli import main, parse_synthetic_spec
from sparsamp.errors import ParameterError

MOCK_CMD = (
    f"{sys.executable} -m sparsamp.cli mock-serve"
    " --synthetic zipf:64:1.2 --seed 3 --max-steps 400"
)


def run_cli(*args):
    try:
        main(list(args))
    except SystemExit as exc:
        return exc.code
    raise AssertionError("main() must always exit")


@pytest.fixture
def keyfile(tmp_path):
    path = tmp_path / "key.hex"
    assert run_cli("keygen", "--out", str(path)) == 0
    return str(path)


def test_keygen_format(keyfile):
    text = Path(keyfile).read_text()
    assert len(text.strip()) == 64
    bytes.fromhex(text.strip())


def test_parse_synthetic_spec():
    spec = parse_synthetic_spec("zipf:50000:1.2")
    assert (spec.kind, spec.vocab_size, spec.zipf_exponent) == ("zipf", 50000, 1.2)
    assert parse_synthetic_spec("uniform:16").vocab_size == 16
    assert parse_synthetic_spec("entropy:256:6.0").target_entropy == 6.0
    with pytest.raises(ParameterError):
        parse_synthetic_spec("zipf:abc:1")
    with pytest.raises(ParameterError):
        parse_synthetic_spec("nope:4")


def test_embed_extract_round_trip(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"attack at dawn")
    tokens = tmp_path / "tokens.json"
    out = tmp_path / "out.bin"
    common = ["--key", keyfile, "--lm", "16", "--synthetic", "zipf:128:1.1",
              "--seed", "7", "--max-steps", "600"]
    assert run_cli("embed", *common, "--in", str(msg), "--out", str(tokens)) == 0
    doc = json.loads(tokens.read_text())
    assert doc["complete"] and doc["lm"] == 16
    assert all(isinstance(t, int) for t in doc["tokens"])
    assert run_cli("extract", *common, "--in", str(tokens), "--out", str(out)) == 0
    assert out.read_bytes() == b"attack at dawn"


def test_embed_extract_with_whitening(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(bytes(range(32)))
    tokens = tmp_path / "tokens.json"
    out = tmp_path / "out.bin"
    common = ["--key", keyfile, "--synthetic", "entropy:256:6.0",
              "--seed", "2", "--max-steps", "400"]
    assert run_cli("embed", *common, "--whiten", "--in", str(msg),
                   "--out", str(tokens)) == 0
    assert run_cli("extract", *common, "--in", str(tokens), "--out", str(out)) == 0
    assert out.read_bytes() == bytes(range(32))


def test_wrong_key_exits_4(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"secret")
    tokens = tmp_path / "tokens.json"
    out = tmp_path / "out.bin"
    common = ["--lm", "16", "--synthetic", "zipf:128:1.1", "--seed", "9",
              "--max-steps", "600"]
    assert run_cli("embed", "--key", keyfile, *common, "--in", str(msg),
                   "--out", str(tokens)) == 0
    wrong = tmp_path / "wrong.hex"
    run_cli("keygen", "--out", str(wrong))
    code = run_cli("extract", "--key", str(wrong), *common, "--in", str(tokens),
                   "--out", str(out))
    assert code == 4
    assert not out.exists()


def test_lm_1024_exits_2(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"x")
    code = run_cli("embed", "--key", keyfile, "--lm", "1024",
                   "--synthetic", "uniform:16", "--in", str(msg),
                   "--out", str(tmp_path / "t.json"))
    assert code == 2


def test_source_flags_are_exclusive(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"x")
    code = run_cli("embed", "--key", keyfile, "--in", str(msg),
                   "--out", str(tmp_path / "t.json"))
    assert code == 2
    code = run_cli("embed", "--key", keyfile, "--synthetic", "uniform:8",
                   "--ngram", keyfile, "--in", str(msg),
                   "--out", str(tmp_path / "t.json"))
    assert code == 2


def test_incomplete_embed_saves_state(tmp_path, keyfile, capsys):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(bytes(64))
    tokens = tmp_path / "tokens.json"
    code = run_cli("embed", "--key", keyfile, "--lm", "64",
                   "--synthetic", "zipf:16:1.0", "--seed", "1",
                   "--max-steps", "3", "--in", str(msg), "--out", str(tokens))
    assert code == 0
    doc = json.loads(tokens.read_text())
    assert not doc["complete"]
    assert "state" in doc and bytes.fromhex(doc["state"])
    assert "incomplete" in capsys.readouterr().err


def test_ngram_train_and_round_trip(tmp_path, keyfile):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("the quick brown fox jumps over the lazy dog " * 20)
    model = tmp_path / "model.json"
    assert run_cli("ngram-train", "--in", str(corpus), "--n", "3",
                   "--out", str(model)) == 0
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"hi")
    tokens = tmp_path / "tokens.json"
    out = tmp_path / "out.bin"
    common = ["--key", keyfile, "--lm", "8", "--ngram", str(model),
              "--context", "the", "--max-steps", "800"]
    assert run_cli("embed", *common, "--in", str(msg), "--out", str(tokens)) == 0
    doc = json.loads(tokens.read_text())
    assert isinstance(doc.get("text"), str) and len(doc["text"]) == len(doc["tokens"])
    assert run_cli("extract", *common, "--in", str(tokens), "--out", str(out)) == 0
    assert out.read_bytes() == b"hi"


def test_trace_record_and_replay(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"trace me")
    trace = tmp_path / "run.trace"
    tokens = tmp_path / "tokens.json"
    out = tmp_path / "out.bin"
    assert run_cli("trace", "record", "--key", keyfile, "--lm", "8",
                   "--synthetic", "zipf:64:1.2", "--seed", "5",
                   "--max-steps", "400", "--in", str(msg),
                   "--trace-out", str(trace), "--out", str(tokens)) == 0
    assert trace.read_bytes()[:5] == b"SSTR1"
    assert run_cli("trace", "replay", "--key", keyfile, "--lm", "8",
                   "--trace", str(trace), "--out", str(out)) == 0
    assert out.read_bytes() == b"trace me"


def test_trace_replay_wrong_key_fails(tmp_path, keyfile):
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"trace me")
    trace = tmp_path / "run.trace"
    run_cli("trace", "record", "--key", keyfile, "--lm", "8", "--synthetic",
            "zipf:64:1.2", "--seed", "5", "--max-steps", "400",
            "--in", str(msg), "--trace-out", str(trace))
    wrong = tmp_path / "wrong.hex"
    run_cli("keygen", "--out", str(wrong))
    code = run_cli("trace", "replay", "--key", str(wrong), "--lm", "8",
                   "--trace", str(trace), "--out", str(tmp_path / "o.bin"))
    assert code == 4


def test_mock_serve_integration(tmp_path, keyfile):
    """Full stdio protocol round trip: embed and extract against mock-serve."""
    msg = tmp_path / "msg.bin"
    msg.write_bytes(b"over the wire")
    tokens = tmp_path / "tokens.json"
    out = tmp_path / "out.bin"
    common = ["--key", keyfile, "--lm", "16", "--model-cmd", MOCK_CMD]
    assert run_cli("embed", *common, "--in", str(msg), "--out", str(tokens)) == 0
    assert run_cli("extract", *common, "--in", str(tokens), "--out", str(out)) == 0
    assert out.read_bytes() == b"over the wire"


def test_bench_smoke(tmp_path, capsys):
    report = tmp_path / "bench.json"
    code = run_cli("bench", "--vocab", "2000", "--iterations", "60",
                   "--runs", "1", "--json", str(report))
    assert code == 0
    doc = json.loads(report.read_text())
    assert "overhead" in doc and "utilization" in doc and "kernels" in doc
    assert doc["overhead"]["embed_over_plain"] > 0
    shown = capsys.readouterr().out
    assert "embed/plain" in shown and "utilization" in shown
