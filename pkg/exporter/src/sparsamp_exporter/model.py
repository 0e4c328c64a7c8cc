"""Deterministic next-token distributions from a causal language model.

The codec's round trip only works if embedding and extraction see
bit-identical probabilities, so everything here is pinned: CPU eval mode,
no grad, float64 softmax in numpy, truncation with a total order, and
renormalization in float64. Given the same weights and the same token
context, two processes produce the same bytes on the wire.
"""

from __future__ import annotations

import numpy as np
import torch


class CausalLMOracle:
    """Wraps a pretrained causal LM as a pure distribution function."""

    def __init__(self, model_path: str, top_p: float | None = None,
                 top_k: int | None = None, temperature: float = 1.0):
        from transformers import AutoModelForCausalLM, AutoTokenizer

        if top_p is not None and not 0.0 < top_p <= 1.0:
            raise ValueError(f"top_p must lie in (0, 1], got {top_p}")
        if top_k is not None and top_k < 2:
            # a single-token distribution cannot carry the protocol's
            # strictly-in-(0,1) probabilities, nor any message bits
            raise ValueError(f"top_k must be at least 2, got {top_k}")
        if temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.model = AutoModelForCausalLM.from_pretrained(model_path)
        self.model.eval()
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        except Exception:
            self.tokenizer = None  # context must then arrive as token ids
        self.top_p = top_p
        self.top_k = top_k
        self.temperature = temperature
        self.vocab_size = int(self.model.config.vocab_size)
        eos = getattr(self.model.config, "eos_token_id", None)
        self.eos_id = int(eos) if eos is not None else None
        self.max_context = int(
            getattr(self.model.config, "max_position_embeddings", 0)
            or getattr(self.model.config, "n_positions", 0)
            or 10**9
        )
        self.context: list[int] = []

    @property
    def model_id(self) -> str:
        return getattr(self.model, "name_or_path", "") or "causal-lm"

    def reset(self, prompt: str | None, context: list[int] | None) -> None:
        if context is not None:
            bad = [t for t in context if not 0 <= int(t) < self.vocab_size]
            if bad:
                raise ValueError(f"context ids outside vocabulary: {bad[:3]}")
            self.context = [int(t) for t in context]
        elif prompt is not None:
            if self.tokenizer is None:
                raise ValueError("no tokenizer available; send context ids instead")
            self.context = self.tokenizer.encode(prompt, add_special_tokens=False)
        else:
            raise ValueError("reset needs a prompt or a token-id context")
        if not self.context:
            raise ValueError("context is empty after encoding")

    def advance(self, token_id: int) -> None:
        self.context.append(int(token_id))

    def next_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, probs) for the next token, truncated and renormalized.

        Truncation selects by probability (ties broken by token id) and
        the kept entries are emitted in the model's default token order.
        """
        if len(self.context) >= self.max_context:
            raise ValueError(
                f"context length {len(self.context)} reached the model's "
                f"window of {self.max_context}"
            )
        x = torch.tensor([self.context], dtype=torch.long)
        with torch.no_grad():
            logits = self.model(x).logits[0, -1]
        z = logits.numpy().astype(np.float64)
        if self.temperature != 1.0:
            z = z / self.temperature
        z -= z.max()
        probs = np.exp(z)
        probs /= probs.sum()

        # deterministic order: probability descending, token id ascending
        order = np.lexsort((np.arange(probs.shape[0]), -probs))
        keep = probs.shape[0]
        if self.top_k is not None:
            keep = min(keep, self.top_k)
        if self.top_p is not None:
            cum = np.cumsum(probs[order])
            nucleus = int(np.searchsorted(cum, self.top_p, side="left")) + 1
            keep = min(keep, max(nucleus, 2))
        keep = max(keep, 2)
        kept = np.sort(order[:keep])
        kept_probs = probs[kept]
        kept_probs = kept_probs / kept_probs.sum()
        if kept_probs.min() <= 0.0 or kept_probs.max() >= 1.0:
            raise ValueError(
                "distribution too peaked to serve: a probability left (0, 1)"
            )
        return kept, kept_probs
