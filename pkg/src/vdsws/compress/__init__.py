"""Post-training codec: clustering, pruning, offset-CSR, Huffman, accounting."""
from .container import decode_container, encode_container
from .csr import SparseCsrMatrix, csr_decode, csr_encode
from .huffman import HuffmanCodebook, huffman_build, huffman_decode, huffman_encode
from .prune import prune_structure
from .quantize import (
    QuantizedLayer,
    QuantizedNetwork,
    fit_fixed_quantizer,
    quantize_gm,
    quantize_vd_baseline,
    vd_threshold,
)
from .report import CompressionReport, compress_quantized, compression_report, encode_layers

__all__ = [
    "CompressionReport", "HuffmanCodebook", "QuantizedLayer", "QuantizedNetwork",
    "SparseCsrMatrix", "compress_quantized", "compression_report", "csr_decode",
    "csr_encode", "decode_container", "encode_container", "encode_layers",
    "fit_fixed_quantizer", "huffman_build", "huffman_decode", "huffman_encode",
    "prune_structure", "quantize_gm", "quantize_vd_baseline", "vd_threshold",
]
