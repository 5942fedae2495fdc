"""Bayesian compression of dense networks: sparse variational dropout joined with
soft weight sharing, followed by quantisation, pruning, offset-CSR and Huffman coding."""

__version__ = "0.1.0"
