"""BVNC compressed-model container.

Little-endian throughout, bit blocks packed MSB-first and zero-padded to a
byte boundary. See ``docs/bvnc_format.md`` for the byte layout.
"""
from __future__ import annotations

import struct

import numpy as np

from .csr import SparseCsrMatrix, csr_decode, ir_width, validate
from .huffman import HuffmanCodebook, canonical_codes, huffman_decode
from .quantize import QuantizedLayer, QuantizedNetwork
from .report import EncodedLayer

MAGIC = b"BVNC"
VERSION = 1


class ContainerError(ValueError):
    pass


def _pack_ints(values, width):
    values = np.asarray(values, dtype=np.uint64)
    if width == 0 or values.size == 0:
        return 0, b""
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    bits = ((values[:, None] >> shifts) & np.uint64(1)).astype(np.uint8).ravel()
    return bits.size, np.packbits(bits).tobytes()


def _unpack_ints(data, n, width):
    if width == 0 or n == 0:
        return np.zeros(n, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: n * width]
    bits = bits.reshape(n, width).astype(np.int64)
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def _pack_bitstring(bits):
    if not bits:
        return 0, b""
    arr = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
    return arr.size, np.packbits(arr).tobytes()


def _unpack_bitstring(data, nbits):
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:nbits]
    return (arr + ord("0")).tobytes().decode("ascii")


def _block(nbits, payload):
    return struct.pack("<Q", nbits) + payload


def encode_container(qnet: QuantizedNetwork, encoded: list[EncodedLayer]) -> bytes:
    """Serialise a pruned quantised network and its per-layer encodings."""
    K = qnet.K
    if K > 0xFFFF:
        raise ContainerError("codebook too large")
    codebook = qnet.codebook.astype("<f4").tobytes()
    out = [MAGIC, struct.pack("<BI", VERSION, len(encoded))]
    for enc in encoded:
        csr = enc.csr
        rows, cols = csr.shape
        w_ir = ir_width(csr)
        lengths = np.zeros(K, dtype=np.uint8)
        if enc.book is not None:
            for s, n in enc.book.lengths.items():
                if n > 255:
                    raise ContainerError("code length exceeds 255 bits")
                lengths[s] = n
        out.append(struct.pack("<IIBBHH", rows, cols, csr.offset_bits, w_ir, K,
                               qnet.zero_symbol))
        out.append(codebook)
        out.append(lengths.tobytes())
        out.append(_block(*_pack_ints(csr.IR, w_ir)))
        out.append(_block(*_pack_ints(csr.IC_prime, csr.offset_bits)))
        out.append(_block(*_pack_bitstring(enc.bits)))
        bias = np.asarray(enc.bias, dtype="<f4")
        out.append(struct.pack("<I", bias.size) + bias.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ContainerError("truncated container")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self):
        (nbits,) = self.unpack("<Q")
        return nbits, self.take((nbits + 7) // 8)


def decode_container(data: bytes):
    """Inverse of :func:`encode_container`; returns ``(qnet, encoded)``."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ContainerError("bad magic")
    version, n_layers = r.unpack("<BI")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    layers, encoded = [], []
    codebook = zero = None
    for _ in range(n_layers):
        rows, cols, offset_bits, w_ir, K, zero_symbol = r.unpack("<IIBBHH")
        cb = np.frombuffer(r.take(4 * K), dtype="<f4").astype(np.float64)
        if codebook is None:
            codebook, zero = cb, zero_symbol
        elif not np.array_equal(cb, codebook) or zero_symbol != zero:
            raise ContainerError("layers disagree on the codebook")
        lengths = np.frombuffer(r.take(K), dtype=np.uint8)
        nbits, payload = r.block()
        if nbits != (rows + 1) * w_ir:
            raise ContainerError("IR block length mismatch")
        IR = _unpack_ints(payload, rows + 1, w_ir)
        n_stored = int(IR[-1])
        nbits, payload = r.block()
        if nbits != n_stored * offset_bits:
            raise ContainerError("IC' block length mismatch")
        IC = _unpack_ints(payload, n_stored, offset_bits)
        nbits, payload = r.block()
        bits = _unpack_bitstring(payload, nbits)
        lens = {int(s): int(n) for s, n in enumerate(lengths) if n}
        book = HuffmanCodebook(lens, canonical_codes(lens)) if lens else None
        A = np.asarray(huffman_decode(bits, book) if book else [], dtype=np.int64)
        (nb,) = r.unpack("<I")
        bias = np.frombuffer(r.take(4 * nb), dtype="<f4").astype(np.float64)
        if nb != rows:
            raise ContainerError("bias length does not match rows")
        csr = SparseCsrMatrix(A, IR, IC, offset_bits, (rows, cols), zero_symbol)
        try:
            validate(csr)
        except ValueError as e:
            raise ContainerError(str(e)) from e
        layers.append(QuantizedLayer(csr_decode(csr), bias))
        encoded.append(EncodedLayer(csr, book, bits, bias))
    if r.pos != len(data):
        raise ContainerError("trailing bytes after last layer")
    if not layers:
        raise ContainerError("container holds no layers")
    return QuantizedNetwork(layers, codebook, zero), encoded
