"""Counterfactual edge-deletion explanations for GCN node classification
via thresholded Banzhaf and Shapley values."""

from banzhaf_cfe.graph import LabeledGraph, canonical_edge
from banzhaf_cfe.gcn import GcnModel, TrainConfig, forward, predicted_class, train
from banzhaf_cfe.game import EdgeGame, ThresholdPolicy, make_game
from banzhaf_cfe.semivalues import SamplePolicy, SemivalueResult, WeightFunction

__all__ = [
    "EdgeGame",
    "GcnModel",
    "LabeledGraph",
    "SamplePolicy",
    "SemivalueResult",
    "ThresholdPolicy",
    "TrainConfig",
    "WeightFunction",
    "canonical_edge",
    "forward",
    "make_game",
    "predicted_class",
    "train",
]

__version__ = "0.1.0"
