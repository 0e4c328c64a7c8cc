import os

import pytest

os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_OFFLINE", "1")


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small causal LM saved through the standard pretrained-model path.

    Seeded random weights: the hub is unreachable here, and the protocol,
    serving path and determinism requirements are identical either way.
    """
    import torch
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(1234)
    config = GPT2Config(
        vocab_size=256, n_positions=256, n_embd=64, n_layer=2, n_head=2,
        bos_token_id=0, eos_token_id=None,
    )
    model = GPT2LMHeadModel(config).eval()
    path = tmp_path_factory.mktemp("model") / "tiny-causal-lm"
    model.save_pretrained(path)
    return str(path)
