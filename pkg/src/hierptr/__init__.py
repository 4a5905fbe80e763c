"""Bottom-up hierarchical pointer networks for transition-based dependency parsing."""

__version__ = "0.1.0"

from .model import HierPtrNet, ModelConfig, Vocab, load_checkpoint, save_checkpoint
from .transition import System, focus_order, oracle_sequence
from .treebank import DepTree, Sentence, Token, parse_conllu, read_conllu, write_conllu

__all__ = [
    "DepTree", "HierPtrNet", "ModelConfig", "Sentence", "System", "Token", "Vocab",
    "focus_order", "load_checkpoint", "oracle_sequence", "parse_conllu", "read_conllu",
    "save_checkpoint", "write_conllu",
]
