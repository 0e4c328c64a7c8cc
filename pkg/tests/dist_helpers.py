import numpy as np

from sparsamp.codec import build_distribution


def random_dist(rng, vocab):
    """A strictly positive random distribution over arange(vocab)."""
    probs = rng.dirichlet(np.full(vocab, 0.8))
    probs = np.maximum(probs, 1e-12)
    probs /= probs.sum()
    return build_distribution(np.arange(vocab), probs, trusted_ids=True)
