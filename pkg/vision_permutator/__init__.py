"""
Vision Permutator: MLP-like image classification from first principles

This package provides a small reverse-mode autodiff library, the Permute-MLP
token mixer and Permutator block, a registry of model configurations, a
desk-scale training harness and a throughput benchmark.
"""

__version__ = "0.1.0"
