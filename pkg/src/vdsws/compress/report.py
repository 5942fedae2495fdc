"""Bit-exact size accounting for a compressed network."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field

from .csr import SparseCsrMatrix, csr_encode, ir_width
from .huffman import HuffmanCodebook, huffman_build, huffman_encode
from .prune import prune_structure
from .quantize import QuantizedNetwork

FLOAT_BITS = 32
CODE_LENGTH_BITS = 8


@dataclass
class LayerReport:
    shape: tuple
    stored_entries: int
    nonzero_weights: int
    value_bits: int
    offset_bits_total: int
    row_index_bits: int
    codebook_bits: int
    bias_bits: int

    @property
    def total_bits(self):
        return (self.value_bits + self.offset_bits_total + self.row_index_bits
                + self.codebook_bits + self.bias_bits)


@dataclass
class CompressionReport:
    method: str
    original_bits: int
    layers: list[LayerReport] = field(default_factory=list)
    original_weights: int = 0
    nonzero_weights: int = 0
    accuracy_after: float | None = None

    @property
    def compressed_bits(self):
        return sum(l.total_bits for l in self.layers)

    @property
    def sparsity(self):
        """|W != 0| / |W| over the original architecture."""
        return self.nonzero_weights / self.original_weights

    @property
    def compression_ratio(self):
        return self.original_bits / self.compressed_bits

    def totals(self):
        keys = ("value_bits", "offset_bits_total", "row_index_bits", "codebook_bits",
                "bias_bits")
        return {k: sum(getattr(l, k) for l in self.layers) for k in keys}

    def to_dict(self):
        return {
            "method": self.method,
            "original_bits": self.original_bits,
            "compressed_bits": self.compressed_bits,
            "compression_ratio": self.compression_ratio,
            "original_weights": self.original_weights,
            "nonzero_weights": self.nonzero_weights,
            "sparsity": self.sparsity,
            "accuracy_after": self.accuracy_after,
            "totals": self.totals(),
            "layers": [dict(asdict(l), shape=list(l.shape), total_bits=l.total_bits)
                       for l in self.layers],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        head = f"{'layer':>5} {'shape':>11} {'stored':>8} {'nonzero':>8} {'values':>9} " \
               f"{'offsets':>9} {'rows':>7} {'codebook':>9} {'bias':>7} {'total':>10}"
        lines = [f"method: {self.method}", head]
        for i, l in enumerate(self.layers):
            shape = "x".join(map(str, l.shape))
            lines.append(f"{i:>5} {shape:>11} {l.stored_entries:>8} {l.nonzero_weights:>8} "
                         f"{l.value_bits:>9} {l.offset_bits_total:>9} {l.row_index_bits:>7} "
                         f"{l.codebook_bits:>9} {l.bias_bits:>7} {l.total_bits:>10}")
        acc = "n/a" if self.accuracy_after is None else f"{100 * self.accuracy_after:.2f}%"
        lines += [
            f"original bits:     {self.original_bits}",
            f"compressed bits:   {self.compressed_bits}",
            f"nonzero weights:   {self.nonzero_weights} / {self.original_weights} "
            f"({100 * self.sparsity:.2f}%)",
            f"compression ratio: {self.compression_ratio:.2f}",
            f"accuracy:          {acc}",
        ]
        return "\n".join(lines)


@dataclass
class EncodedLayer:
    csr: SparseCsrMatrix
    book: HuffmanCodebook | None
    bits: str
    bias: object


def encode_layers(qnet: QuantizedNetwork, offset_bits):
    """CSR-pack and Huffman-code every layer of an (already pruned) network."""
    out = []
    for layer in qnet.layers:
        csr = csr_encode(layer.symbols, offset_bits, qnet.zero_symbol)
        symbols = csr.A.tolist()
        book = huffman_build(Counter(symbols)) if symbols else None
        bits = huffman_encode(symbols, book) if book else ""
        out.append(EncodedLayer(csr, book, bits, layer.bias))
    return out


def original_size(sizes):
    """(weights, weights + biases) of a dense architecture."""
    w = sum(a * b for a, b in zip(sizes, sizes[1:]))
    return w, w + sum(sizes[1:])


def compression_report(original_sizes, qnet: QuantizedNetwork, encoded, accuracy=None,
                       method="sws"):
    """Account every stored bit of ``encoded`` against a 32-bit dense original.

    Per layer: Huffman-coded A, |IC'| * offset_bits, |IR| * ceil(log2(IR_max + 1)),
    K * 32 codebook values, K * 8 code lengths and 32 bits per surviving bias.
    """
    n_weights, n_params = original_size(original_sizes)
    K = qnet.K
    rep = CompressionReport(method, FLOAT_BITS * n_params, original_weights=n_weights,
                            accuracy_after=accuracy)
    for i, enc in enumerate(encoded):
        nnz = int(qnet.nonzero_mask(i).sum())
        rep.layers.append(LayerReport(
            shape=tuple(enc.csr.shape),
            stored_entries=enc.csr.nnz_stored,
            nonzero_weights=nnz,
            value_bits=len(enc.bits),
            offset_bits_total=len(enc.csr.IC_prime) * enc.csr.offset_bits,
            row_index_bits=len(enc.csr.IR) * ir_width(enc.csr),
            codebook_bits=K * (FLOAT_BITS + CODE_LENGTH_BITS),
            bias_bits=FLOAT_BITS * len(enc.bias),
        ))
        rep.nonzero_weights += nnz
    return rep


def dense_report(sizes, accuracy=None, method="l2"):
    """Uncompressed 32-bit storage: compression ratio exactly 1."""
    n_weights, n_params = original_size(sizes)
    rep = CompressionReport(method, FLOAT_BITS * n_params, original_weights=n_weights,
                            nonzero_weights=n_weights, accuracy_after=accuracy)
    rep.layers.append(LayerReport((n_params,), n_weights, n_weights,
                                  FLOAT_BITS * n_weights, 0, 0, 0,
                                  FLOAT_BITS * (n_params - n_weights)))
    return rep


def compress_quantized(qnet: QuantizedNetwork, original_sizes, offset_bits=5, data=None,
                       method="sws"):
    """Prune, encode and account a quantised network.

    Returns ``(pruned, encoded, report)``; accuracy is measured on ``data``
    (``(x, y)``) with the pruned network when given.
    """
    pruned = prune_structure(qnet)
    encoded = encode_layers(pruned, offset_bits)
    acc = None
    if data is not None:
        from ..trainer import evaluate_accuracy
        acc = evaluate_accuracy(pruned, data)
    return pruned, encoded, compression_report(original_sizes, pruned, encoded, acc, method)
