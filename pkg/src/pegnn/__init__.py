"""Positional-encoding-equivariant graph networks for link prediction."""
from .errors import PegError
from .graph import Graph, Permutation, apply_permutation, brute_force_match, normalized_adjacency
from .model import ModelConfig, PegModel, build_model, make_peg_layer, peg_forward
from .procrustes import eta, pe_match, sign_match
from .spectral import PositionalEncoding, eigengap_table, laplacian_eigenmap

__all__ = ["Graph", "ModelConfig", "PegError", "PegModel", "Permutation", "PositionalEncoding",
           "apply_permutation", "brute_force_match", "build_model", "eigengap_table", "eta",
           "laplacian_eigenmap", "make_peg_layer", "normalized_adjacency", "pe_match",
           "peg_forward", "sign_match"]
