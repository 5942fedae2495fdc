"""Canonical Huffman codes over a small symbol alphabet.

Bitstreams are plain ``str`` objects of '0' / '1' characters.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass


class HuffmanError(ValueError):
    pass


@dataclass
class HuffmanCodebook:
    lengths: dict  # symbol -> code length
    codes: dict  # symbol -> bitstring

    @property
    def symbols(self):
        """Canonical order: by (length, symbol)."""
        return sorted(self.lengths, key=lambda s: (self.lengths[s], s))

    def __len__(self):
        return len(self.codes)

    def expected_length(self, frequencies):
        total = sum(frequencies.values())
        return sum(frequencies[s] * self.lengths[s] for s in frequencies) / total


def code_lengths(frequencies):
    """Optimal code lengths; heap ties are broken by the smallest contained symbol."""
    items = sorted((s, c) for s, c in frequencies.items() if c > 0)
    if not items:
        raise HuffmanError("need at least one symbol with a positive count")
    if len(items) == 1:
        return {items[0][0]: 1}
    tie = itertools.count()
    heap = [(c, (s,), next(tie), [s]) for s, c in items]
    heapq.heapify(heap)
    lengths = {s: 0 for s, _ in items}
    while len(heap) > 1:
        c1, k1, _, g1 = heapq.heappop(heap)
        c2, k2, _, g2 = heapq.heappop(heap)
        for s in itertools.chain(g1, g2):
            lengths[s] += 1
        heapq.heappush(heap, (c1 + c2, min(k1, k2), next(tie), g1 + g2))
    return lengths


def canonical_codes(lengths):
    """Assign canonical codewords given code lengths."""
    code = 0
    prev_len = 0
    codes = {}
    for s in sorted(lengths, key=lambda s: (lengths[s], s)):
        n = lengths[s]
        code <<= n - prev_len
        codes[s] = format(code, f"0{n}b")
        code += 1
        prev_len = n
    return codes


def huffman_build(frequencies):
    """Canonical Huffman codebook for ``{symbol: count}``; zero counts get no code."""
    if not frequencies:
        raise HuffmanError("empty frequency map")
    lengths = code_lengths(frequencies)
    return HuffmanCodebook(lengths, canonical_codes(lengths))


def huffman_encode(symbols, book: HuffmanCodebook):
    try:
        return "".join(book.codes[s] for s in symbols)
    except KeyError as e:
        raise HuffmanError(f"symbol {e.args[0]!r} not in codebook") from None


def huffman_decode(bits, book: HuffmanCodebook):
    table = {c: s for s, c in book.codes.items()}
    out = []
    cur = ""
    for b in bits:
        if b not in "01":
            raise HuffmanError(f"invalid bit {b!r}")
        cur += b
        s = table.get(cur)
        if s is not None:
            out.append(s)
            cur = ""
    if cur:
        raise HuffmanError("truncated bitstream")
    return out
