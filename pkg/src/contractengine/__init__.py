"""Contract engine: hierarchical keys, codified contracts, tokens, a simulated
UTXO ledger, content-addressed repositories, agents and entity exchange."""

from .errors import EngineError

__version__ = "0.1.0"

__all__ = ["EngineError", "__version__"]
