"""CSR with fixed-width relative column offsets.

Within a row the first stored entry's offset is its column index and later
offsets are the distance to the previous stored entry. A gap that does not
fit in ``offset_bits`` bits is bridged by storing zero symbols at the largest
reachable column, ``2**offset_bits - 1`` past the current anchor (the row
start for the first entry), until the remaining gap fits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CsrCorruptionError(ValueError):
    pass


@dataclass
class SparseCsrMatrix:
    A: np.ndarray  # stored symbols, inserted zeros included
    IR: np.ndarray  # (rows + 1,) cumulative stored counts
    IC_prime: np.ndarray  # column offsets, each < 2**offset_bits
    offset_bits: int
    shape: tuple
    zero_symbol: int = 0

    @property
    def nnz_stored(self):
        return int(self.IR[-1]) if len(self.IR) else 0


def csr_encode(M, offset_bits, zero_symbol=0):
    """Encode a 2-d symbol matrix; entries equal to ``zero_symbol`` are structural zeros."""
    if offset_bits < 1:
        raise ValueError("offset_bits must be >= 1")
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    max_off = (1 << offset_bits) - 1
    A, IC, IR = [], [], [0]
    for row in M:
        prev = None
        for col in np.flatnonzero(row != zero_symbol):
            col = int(col)
            anchor = 0 if prev is None else prev
            gap = col - anchor
            while gap > max_off:
                anchor += max_off
                A.append(zero_symbol)
                IC.append(max_off)
                gap = col - anchor
            A.append(row[col].item())
            IC.append(gap)
            prev = col
        IR.append(len(A))
    return SparseCsrMatrix(np.asarray(A, dtype=np.int64), np.asarray(IR, dtype=np.int64),
                           np.asarray(IC, dtype=np.int64), int(offset_bits),
                           (int(M.shape[0]), int(M.shape[1])), zero_symbol)


def validate(S: SparseCsrMatrix):
    rows, cols = S.shape
    IR = np.asarray(S.IR)
    if IR.shape != (rows + 1,) or (rows + 1 and IR[0] != 0):
        raise CsrCorruptionError("IR must have rows + 1 entries starting at 0")
    if np.any(np.diff(IR) < 0):
        raise CsrCorruptionError("IR is not nondecreasing")
    n = int(IR[-1])
    if len(S.A) != n or len(S.IC_prime) != n:
        raise CsrCorruptionError(f"|A|={len(S.A)}, |IC'|={len(S.IC_prime)}, IR[-1]={n}")
    if n and (np.min(S.IC_prime) < 0 or np.max(S.IC_prime) >= 1 << S.offset_bits):
        raise CsrCorruptionError("column offset outside the fixed bit width")


def csr_decode(S: SparseCsrMatrix):
    """Rebuild the dense symbol matrix; inserted zeros decode as plain zeros."""
    validate(S)
    rows, cols = S.shape
    M = np.full((rows, cols), S.zero_symbol, dtype=np.int64)
    for r in range(rows):
        pos = None
        for k in range(int(S.IR[r]), int(S.IR[r + 1])):
            off = int(S.IC_prime[k])
            if pos is None:
                pos = off
            else:
                if off == 0:
                    raise CsrCorruptionError(f"row {r}: repeated column")
                pos += off
            if pos >= cols:
                raise CsrCorruptionError(f"row {r}: offset walks past column {cols - 1}")
            M[r, pos] = S.A[k]
    return M


def ir_width(S: SparseCsrMatrix):
    """Minimal fixed bit width for the row-pointer entries."""
    return int(np.ceil(np.log2(S.nnz_stored + 1)))
