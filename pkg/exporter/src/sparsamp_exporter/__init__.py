"""Step-protocol server exposing causal LMs as bit-exact distribution
oracles for the sparsamp codec."""

from .model import CausalLMOracle
from .server import serve

__version__ = "0.1.0"

__all__ = ["CausalLMOracle", "serve"]
