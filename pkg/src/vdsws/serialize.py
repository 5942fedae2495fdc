"""Versioned binary model files (``BVNM``).

Layout: magic ``BVNM``, version byte, u32 little-endian header length, a
compact JSON header with sorted keys, then every array listed in the header
as raw little-endian data in header order. Identical models produce identical
bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .net import AdamState, Network, VariationalDenseLayer
from .vb_core import MixturePrior

MAGIC = b"BVNM"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _arrays(net, prior, adam):
    arrays = []
    for i, layer in enumerate(net.layers):
        arrays += [(f"theta.{i}", layer.theta), (f"log_sigma2.{i}", layer.log_sigma2),
                   (f"bias.{i}", layer.bias)]
    if prior is not None:
        arrays += [("prior.log_pi", prior.log_pi), ("prior.mu", prior.mu),
                   ("prior.log_lambda", prior.log_lambda),
                   ("prior.fixed_mask", prior.fixed_mask.astype(np.uint8))]
    if adam is not None:
        for name in sorted(adam.first_moment):
            arrays += [(f"adam.m.{name}", adam.first_moment[name]),
                       (f"adam.v.{name}", adam.second_moment[name])]
    return arrays


def dumps_model(net: Network, prior: MixturePrior | None = None,
                adam: AdamState | None = None) -> bytes:
    arrays = _arrays(net, prior, adam)
    header = {
        "activation": net.activation,
        "n_layers": len(net.layers),
        "arrays": [{"name": n, "shape": list(a.shape),
                    "dtype": "u1" if a.dtype == np.uint8 else "f8"} for n, a in arrays],
    }
    if prior is not None:
        header["prior_zero_index"] = prior.zero_index
    if adam is not None:
        header["adam"] = {"beta1": adam.beta1, "beta2": adam.beta2,
                          "epsilon": adam.epsilon, "step_count": adam.step_count}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<BI", VERSION, len(blob)), blob]
    for _, a in arrays:
        dt = "u1" if a.dtype == np.uint8 else "<f8"
        parts.append(np.ascontiguousarray(a, dtype=dt).tobytes())
    return b"".join(parts)


def loads_model(data: bytes):
    """Parse model bytes into ``(net, prior_or_None, adam_or_None)``."""
    if data[:4] != MAGIC:
        raise ModelFormatError("not a BVNM model file")
    if len(data) < 9:
        raise ModelFormatError("truncated header")
    version, hlen = struct.unpack("<BI", data[4:9])
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    try:
        header = json.loads(data[9:9 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"corrupt header: {e}") from None
    pos = 9 + hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype("u1" if spec["dtype"] == "u1" else "<f8")
        n = int(np.prod(spec["shape"], dtype=np.int64)) * dt.itemsize
        if pos + n > len(data):
            raise ModelFormatError(f"truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(data[pos:pos + n], dtype=dt).reshape(
            spec["shape"]).astype(np.float64 if dt.kind == "f" else np.uint8)
        pos += n
    if pos != len(data):
        raise ModelFormatError("trailing bytes")
    try:
        layers = [VariationalDenseLayer(arrays[f"theta.{i}"], arrays[f"log_sigma2.{i}"],
                                        arrays[f"bias.{i}"])
                  for i in range(header["n_layers"])]
        net = Network(layers, header["activation"])
    except (KeyError, ValueError) as e:
        raise ModelFormatError(f"inconsistent model: {e}") from None
    prior = None
    if "prior.mu" in arrays:
        prior = MixturePrior(arrays["prior.log_pi"], arrays["prior.mu"],
                             arrays["prior.log_lambda"], header.get("prior_zero_index"),
                             arrays["prior.fixed_mask"].astype(bool))
    adam = None
    if "adam" in header:
        a = header["adam"]
        adam = AdamState(a["beta1"], a["beta2"], a["epsilon"], a["step_count"])
        for key, arr in arrays.items():
            if key.startswith("adam.m."):
                adam.first_moment[key[7:]] = arr.copy()
            elif key.startswith("adam.v."):
                adam.second_moment[key[7:]] = arr.copy()
    return net, prior, adam


def save_model(path, net, prior=None, adam=None):
    Path(path).write_bytes(dumps_model(net, prior, adam))


def load_model(path):
    return loads_model(Path(path).read_bytes())
