"""Directed Steiner tree rounding lab.

Desk-scale implementation of a layered LP-rounding pipeline for the
Directed Steiner Tree problem: exact oracles, flow LPs with pairwise
consistency constraints, a randomized decomposition tree, and the
decompose-and-round / GKR rounding algorithms, plus an experiment
harness that checks the pipeline's probabilistic invariants.
"""

from dstlab.graph import (
    Digraph,
    DstInstance,
    FlowAssignment,
    SolutionSubgraph,
    max_flow,
    max_flow_value,
    metric_closure,
    prune_to_minimal,
    reachable_from,
    validate_instance,
)

__all__ = [
    "Digraph",
    "DstInstance",
    "FlowAssignment",
    "SolutionSubgraph",
    "max_flow",
    "max_flow_value",
    "metric_closure",
    "prune_to_minimal",
    "reachable_from",
    "validate_instance",
]

__version__ = "0.1.0"
