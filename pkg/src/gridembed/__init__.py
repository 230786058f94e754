"""Padded decompositions and coarse grid embeddings of bounded-growth graphs."""
from __future__ import annotations

__version__ = "0.1.0"

from .graph import Graph, Partition, load_graph, dump_graph, growth_profile
from .generators import generate
from .rng import Stream

__all__ = ["Graph", "Partition", "load_graph", "dump_graph", "growth_profile", "generate", "Stream", "__version__"]
