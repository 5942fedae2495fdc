"""Lossless removal of dead hidden units from a quantised dense network."""
from __future__ import annotations

import numpy as np

from .quantize import QuantizedLayer, QuantizedNetwork


class DegenerateNetworkError(ValueError):
    pass


def prune_structure(qnet: QuantizedNetwork):
    """Remove empty rows and columns until nothing changes.

    A hidden unit j feeding layer i + 1 is removed when either
      * row j of layer i is all zero and bias_i[j] == 0 (the unit always
        outputs relu(0) = 0), or
      * column j of layer i + 1 is all zero (nothing reads the unit).
    Removal deletes row j and bias entry j of layer i and column j of layer
    i + 1. Network input and output widths never change.
    """
    layers = [QuantizedLayer(l.symbols.copy(), l.bias.copy()) for l in qnet.layers]
    zero = qnet.zero_symbol
    cb = qnet.codebook
    changed = True
    while changed:
        changed = False
        for i in range(len(layers) - 1):
            up, down = layers[i], layers[i + 1]
            nz_up = cb[up.symbols] != 0.0
            nz_down = cb[down.symbols] != 0.0
            dead_row = ~nz_up.any(axis=1) & (up.bias == 0.0)
            unread = ~nz_down.any(axis=0)
            drop = dead_row | unread
            if not drop.any():
                continue
            if drop.all():
                raise DegenerateNetworkError(
                    f"pruning would remove every unit between layers {i} and {i + 1}")
            keep = ~drop
            layers[i] = QuantizedLayer(up.symbols[keep], up.bias[keep])
            layers[i + 1] = QuantizedLayer(down.symbols[:, keep], down.bias)
            changed = True
    # normalise every stored zero to the zero symbol
    for layer in layers:
        layer.symbols[cb[layer.symbols] == 0.0] = zero
    return QuantizedNetwork(layers, qnet.codebook.copy(), zero)
