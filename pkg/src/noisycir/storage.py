"""Binary container I/O for datasets and trained weights.

Layout (little-endian throughout):
    magic (4 bytes) | version u16 | header_len u32 | JSON header |
    float64 payload | crc32 of payload (u32)

Datasets use magic "NCLD", weight files "NCLW". Writes go to a temp file
in the target directory and are renamed into place, so a failed write
never leaves a partial artifact.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
import zlib

import numpy as np

from .autodiff import ParamStore
from .errors import DataFormatError
from .synth import DatasetSpec, TokenBundle, TripletSample

MAGIC_DATASET = b"NCLD"
MAGIC_WEIGHTS = b"NCLW"
VERSION = 1


def _atomic_write(path: str, blob: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([
        magic,
        struct.pack("<H", VERSION),
        struct.pack("<I", len(hdr)),
        hdr,
        payload,
        struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
    ])


def _unpack(blob: bytes, magic: bytes) -> tuple[dict, bytes]:
    if len(blob) < 10 or blob[:4] != magic:
        raise DataFormatError(f"bad magic: expected {magic!r}")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version}")
    (hdr_len,) = struct.unpack("<I", blob[6:10])
    if len(blob) < 10 + hdr_len + 4:
        raise DataFormatError("truncated file: header incomplete")
    header = json.loads(blob[10:10 + hdr_len].decode("utf-8"))
    payload_len = header["payload_bytes"]
    end = 10 + hdr_len + payload_len
    if len(blob) < end + 4:
        raise DataFormatError("truncated file: payload incomplete")
    payload = blob[10 + hdr_len:end]
    (crc,) = struct.unpack("<I", blob[end:end + 4])
    if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
        raise DataFormatError("checksum mismatch")
    return header, payload


def _bundle_arrays(b: TokenBundle) -> list[np.ndarray]:
    return [b.tokens, b.attention]


def write_dataset(samples: list[TripletSample], spec: DatasetSpec, path: str) -> None:
    chunks: list[bytes] = []
    offsets: list[int] = []
    meta: list[dict] = []
    pos = 0
    for s in samples:
        offsets.append(pos)
        for bundle in (s.mod_text, s.ref_image, s.tar_image):
            for arr in _bundle_arrays(bundle):
                raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                chunks.append(raw)
                pos += len(raw)
        meta.append({"truth": s.truth, "concept_ids": list(s.concept_ids)})
    payload = b"".join(chunks)
    header = {
        "kind": "dataset",
        "spec": dataclasses.asdict(spec),
        "n_samples": len(samples),
        "dims": {"n": spec.text_tokens, "m": spec.image_patches, "d": spec.dim},
        "samples": meta,
        "offsets": offsets,
        "payload_bytes": len(payload),
    }
    _atomic_write(path, _pack(MAGIC_DATASET, header, payload))


def read_dataset(path: str) -> tuple[list[TripletSample], DatasetSpec]:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _unpack(blob, MAGIC_DATASET)
    if header.get("kind") != "dataset":
        raise DataFormatError("not a dataset file")
    spec = DatasetSpec(**header["spec"])
    n, m, d = spec.text_tokens, spec.image_patches, spec.dim

    def take(pos: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=pos)
        return arr.reshape(shape).copy(), pos + count * 8

    samples: list[TripletSample] = []
    for i, meta in enumerate(header["samples"]):
        pos = header["offsets"][i]
        mod_t, pos = take(pos, (n + 2, d))
        mod_a, pos = take(pos, (n + 2,))
        ref_t, pos = take(pos, (m + 1, d))
        ref_a, pos = take(pos, (m + 1,))
        tar_t, pos = take(pos, (m + 1, d))
        tar_a, pos = take(pos, (m + 1,))
        samples.append(TripletSample(
            mod_text=TokenBundle(mod_t, mod_a, n + 1, "text"),
            ref_image=TokenBundle(ref_t, ref_a, 0, "image"),
            tar_image=TokenBundle(tar_t, tar_a, 0, "image"),
            truth=meta["truth"],
            concept_ids=tuple(meta["concept_ids"]),
        ))
    return samples, spec


def write_weights(store: ParamStore, path: str, extra: dict | None = None) -> None:
    chunks: list[bytes] = []
    entries: list[dict] = []
    pos = 0
    for name in store.names():
        arr = np.ascontiguousarray(store.params[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "group": store.groups[name], "offset": pos})
        chunks.append(raw)
        pos += len(raw)
    payload = b"".join(chunks)
    header = {
        "kind": "weights",
        "params": entries,
        "payload_bytes": len(payload),
        "extra": extra or {},
    }
    _atomic_write(path, _pack(MAGIC_WEIGHTS, header, payload))


def read_weights(path: str) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, payload = _unpack(blob, MAGIC_WEIGHTS)
    if header.get("kind") != "weights":
        raise DataFormatError("not a weights file")
    store = ParamStore()
    for e in header["params"]:
        count = int(np.prod(e["shape"]))
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=e["offset"]).reshape(e["shape"]).copy()
        store.add(e["name"], arr, group=e["group"])
    return store
