"""Conformance of the exporter against the step protocol."""

import json
import struct
import subprocess
import sys

import numpy as np
import pytest

from sparsamp_exporter.model import CausalLMOracle
from sparsamp_exporter.server import serve

CONTEXT = [5, 17, 99]


def hex_to_float(h):
    return struct.unpack(">d", bytes.fromhex(h))[0]


class Script:
    """In-process transport: canned client lines, captured server lines."""

    def __init__(self, lines):
        self.incoming = [json.dumps(o).encode() + b"\n" for o in lines]
        self.outgoing = []

    def recv(self):
        return self.incoming.pop(0) if self.incoming else b""

    def send(self, line):
        self.outgoing.append(json.loads(line))


def drive_subprocess(model_dir, steps, extra_args=()):
    """Drive a real server process; returns raw dist envelope lines."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "sparsamp_exporter", "--model", model_dir,
         "--max-steps", "64", *extra_args],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE,
    )
    try:
        hello = json.loads(proc.stdout.readline())
        assert hello["type"] == "hello" and hello["vocab_size"] == 256
        proc.stdin.write(json.dumps(
            {"type": "reset", "prompt": None, "context": CONTEXT,
             "top_p": None, "top_k": None}).encode() + b"\n")
        proc.stdin.flush()
        lines = []
        for _ in range(steps):
            line = proc.stdout.readline()
            lines.append(line)
            obj = json.loads(line)
            assert obj["type"] == "dist"
            choice = obj["ids"][len(obj["ids"]) // 3]  # deterministic pick
            proc.stdin.write(json.dumps(
                {"type": "choose", "token_id": choice}).encode() + b"\n")
            proc.stdin.flush()
        proc.stdout.readline()  # reply to the final choose
    finally:
        proc.stdin.close()
        proc.wait(timeout=30)
    return lines


def test_scripted_replay_is_bit_identical(tiny_model_dir):
    first = drive_subprocess(tiny_model_dir, 5, ("--top-p", "0.9"))
    second = drive_subprocess(tiny_model_dir, 5, ("--top-p", "0.9"))
    assert first == second
    steps = [json.loads(line)["step"] for line in first]
    assert steps == [0, 1, 2, 3, 4]


def test_served_probabilities_are_valid(tiny_model_dir):
    (line,) = drive_subprocess(tiny_model_dir, 1, ("--top-p", "0.8"))
    obj = json.loads(line)
    probs = [hex_to_float(h) for h in obj["probs_hex"]]
    assert all(0.0 < p < 1.0 for p in probs)
    assert abs(sum(p for p in probs) - 1.0) <= 1e-9
    assert obj["ids"] == sorted(obj["ids"])  # default token order


def _full_softmax(model_dir, context):
    import torch
    from transformers import AutoModelForCausalLM

    model = AutoModelForCausalLM.from_pretrained(model_dir).eval()
    with torch.no_grad():
        z = model(torch.tensor([context])).logits[0, -1].numpy().astype(np.float64)
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def test_nucleus_truncation_mass_and_minimality(tiny_model_dir):
    top_p = 0.8
    (line,) = drive_subprocess(tiny_model_dir, 1, ("--top-p", str(top_p)))
    kept = json.loads(line)["ids"]
    full = _full_softmax(tiny_model_dir, CONTEXT)
    mass = full[kept].sum()
    assert mass >= top_p
    if len(kept) > 2:
        weakest = kept[int(np.argmin(full[kept]))]
        assert mass - full[weakest] < top_p  # dropping any member breaks it


def test_top_k_truncation(tiny_model_dir):
    (line,) = drive_subprocess(tiny_model_dir, 1, ("--top-k", "7"))
    obj = json.loads(line)
    assert len(obj["ids"]) == 7
    full = _full_softmax(tiny_model_dir, CONTEXT)
    assert set(obj["ids"]) == set(np.argsort(-full, kind="stable")[:7].tolist())


def test_oracle_rejects_bad_params(tiny_model_dir):
    with pytest.raises(ValueError):
        CausalLMOracle(tiny_model_dir, top_k=1)
    with pytest.raises(ValueError):
        CausalLMOracle(tiny_model_dir, top_p=0.0)
    with pytest.raises(ValueError):
        CausalLMOracle(tiny_model_dir, temperature=0.0)


@pytest.fixture(scope="module")
def oracle(tiny_model_dir):
    return CausalLMOracle(tiny_model_dir, top_p=0.95)


def test_serve_error_paths(oracle):
    script = Script([
        {"type": "choose", "token_id": 3},
        {"type": "reset", "prompt": "hi", "context": None},
        {"type": "reset", "prompt": None, "context": [1, 999]},
        {"type": "dist", "step": 0},
        {"type": "reset", "prompt": None, "context": [1, 2]},
        {"type": "choose", "token_id": 123456},
    ])
    serve(oracle, script.recv, script.send, max_steps=8)
    kinds = [o["type"] for o in script.outgoing]
    assert kinds[0] == "hello"
    assert kinds[1] == "error"  # choose before reset
    assert kinds[2] == "error"  # prompt without a tokenizer
    assert kinds[3] == "error"  # context id outside vocabulary
    assert kinds[4] == "error"  # client-to-server dist makes no sense
    assert kinds[5] == "dist"
    assert kinds[6] == "error"  # token not in the served dist


def test_step_budget_ends_with_eos(oracle):
    lines = [{"type": "reset", "prompt": None, "context": [1]}]
    # enough chooses to exhaust a 2-step budget
    script = Script(lines)
    serve(oracle, script.recv, script.send, max_steps=0)
    assert [o["type"] for o in script.outgoing] == ["hello", "eos"]
