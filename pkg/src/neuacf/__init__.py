"""Aspect-level neural collaborative filtering over heterogeneous information networks."""

from neuacf.hin import HinGraph, Schema, build_graph, relation_matrix
from neuacf.simpath import (
    MetaPath,
    SimilarityMatrix,
    commuting_matrix,
    parse_metapath,
    pathsim,
    similarity_row,
)

__version__ = "0.1.0"

__all__ = [
    "HinGraph",
    "MetaPath",
    "Schema",
    "SimilarityMatrix",
    "build_graph",
    "commuting_matrix",
    "parse_metapath",
    "pathsim",
    "relation_matrix",
    "similarity_row",
]
