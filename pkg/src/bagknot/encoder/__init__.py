"""Hierarchical point-set encoder and its contrastive training."""
from .loss import infonce_loss, infonce_terms
from .model import EncoderConfig, EncoderWeights, PointEncoder, PointGraph, SALevel, build_graph, encode, encode_graphs
from .pointops import CanonicalTransform, ball_query, canonicalize_cloud, farthest_point_sample, lexicographic_order, three_nn
from .train import GraphCache, augmented_cloud, evaluate_pairs, load_encoder, mean_loss, save_encoder, train_encoder

__all__ = [
    "CanonicalTransform",
    "EncoderConfig",
    "EncoderWeights",
    "GraphCache",
    "PointEncoder",
    "PointGraph",
    "SALevel",
    "augmented_cloud",
    "ball_query",
    "build_graph",
    "canonicalize_cloud",
    "encode",
    "encode_graphs",
    "evaluate_pairs",
    "farthest_point_sample",
    "infonce_loss",
    "infonce_terms",
    "lexicographic_order",
    "load_encoder",
    "mean_loss",
    "save_encoder",
    "three_nn",
    "train_encoder",
]
