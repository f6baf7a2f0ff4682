"""Unsupervised constituency parsing with inside-outside chart autoencoders."""

from .estimator import InsideOutsideParser
from .parser import Tree, parse_sexpr, render_tree
from .trainer import Checkpoint, TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "InsideOutsideParser",
    "Tree",
    "parse_sexpr",
    "render_tree",
    "Checkpoint",
    "TrainConfig",
    "fit",
    "__version__",
]
