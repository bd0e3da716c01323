"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"BINEPCK\\0"
    4 bytes   uint32 format version
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header
    ...       payload: the arrays listed in the header, back to back

The header records the architecture, epoch counter, RNG state, free-form
metadata, a SHA-256 of the payload and, for every array, its name, dtype,
shape, byte offset and length.  Sign tensors are stored one bit per weight
(``np.packbits`` of ``sign > 0``, big bit order); everything else is float64.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import CheckpointError
from .network import ArchitectureSpec, LayerParams, Network

MAGIC = b"BINEPCK\0"
VERSION = 1
_PRE = struct.Struct("<8sIQ")


def _pack_sign(sign):
    return np.packbits((np.asarray(sign) > 0).ravel()).tobytes()


def _unpack_sign(buf, shape):
    n = int(np.prod(shape))
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n)
    return np.where(bits == 1, 1, -1).astype(np.int8).reshape(shape)


def save(path, net, epoch=0, rng_state=None, meta=None):
    entries = []
    blobs = []
    offset = 0

    def add(name, kind, arr_bytes, shape):
        nonlocal offset
        entries.append({"name": name, "kind": kind, "shape": list(shape), "offset": offset, "nbytes": len(arr_bytes)})
        blobs.append(arr_bytes)
        offset += len(arr_bytes)

    for k, p in enumerate(net.layers, start=1):
        add(f"sign{k}", "bits", _pack_sign(p.sign), p.sign.shape)
        for field in ("alpha", "momentum", "bias"):
            a = np.asarray(getattr(p, field), dtype="<f8")  # keeps 0-d scaling factors 0-d
            add(f"{field}{k}", "f8", a.tobytes(order="C"), a.shape)
    payload = b"".join(blobs)
    header = {
        "arch": net.arch.to_dict(),
        "dtype": np.dtype(net.dtype).name,
        "epoch": int(epoch),
        "rng_state": rng_state,
        "meta": meta or {},
        "arrays": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PRE.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load(path):
    """Return ``(network, epoch, rng_state, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PRE.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PRE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PRE.size + hlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PRE.size : start])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    payload = raw[start:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays = {}
    for e in header["arrays"]:
        buf = payload[e["offset"] : e["offset"] + e["nbytes"]]
        shape = tuple(e["shape"])
        if e["kind"] == "bits":
            arrays[e["name"]] = _unpack_sign(buf, shape)
        else:
            arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    arch = ArchitectureSpec.from_dict(header["arch"])
    layers = []
    for k in range(1, arch.n_layers + 1):
        try:
            layers.append(
                LayerParams(arrays[f"sign{k}"], arrays[f"alpha{k}"], arrays[f"momentum{k}"], arrays[f"bias{k}"])
            )
        except KeyError as exc:
            raise CheckpointError(f"{path}: missing array {exc}") from None
        if layers[-1].sign.shape != arch.synapses[k - 1].weight_shape:
            raise CheckpointError(f"{path}: layer {k} shape does not match the architecture")
    net = Network(arch, layers, np.dtype(header["dtype"]).type)
    return net, header["epoch"], header["rng_state"], header["meta"]
