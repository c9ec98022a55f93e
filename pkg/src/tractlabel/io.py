"""File formats.

All binary formats are little-endian.

TractogramFile (``.strm``)::

    "STRM" | u32 version = 1 | u32 count
    per streamline: u32 npts | npts * (f32 x, f32 y, f32 z)

VolumeFile (``.vol``)::

    "VOL1" | u8 dtype (0 = f32, 1 = u32 label) | u32 channels | 3 * u32 dims
    | 3 * f32 spacing | 3 * f32 origin | data, x fastest, channels interleaved

DescriptorFile (``.dsc``)::

    "DSC1" | u32 version = 1 | u32 count | u32 N | 5 * u32 channels
    (xyz, lm, sh, t1w, wmparc order)
    per streamline: u32 valid_len | each descriptor as f32 (C, N), row-major

Checkpoint (``.ckpt``)::

    "CKPT" | u32 version = 1 | u32 header length H | H bytes UTF-8 JSON header
    | raw tensor data

The checkpoint header holds the network config, free-form metadata and one
entry per tensor (name, dtype, shape, byte offset into the data section).

LabelCSV: header ``index,tq,rbx,ts,aif``; one row per streamline with a
dense 0-based ascending index and four ``p``/``n`` tokens.

Atlases, region queries, gradient schemes and run configs are JSON.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .descriptors import DESCRIPTOR_NAMES, DescriptorSet
from .ensemble import SUPERVISORS, compose
from .errors import FormatError
from .supervisors import AtlasBundle, BundleAtlas, BundleMasks, RegionQuery
from .volume import GradientScheme, Volume, VolumeGrid

STRM_MAGIC = b"STRM"
VOL_MAGIC = b"VOL1"
DSC_MAGIC = b"DSC1"
CKPT_MAGIC = b"CKPT"
FORMAT_VERSION = 1
LABEL_HEADER = "index," + ",".join(SUPERVISORS)

_VOL_HEADER = struct.Struct("<4sBI3I3f3f")
_VOL_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<u4")}


class _Reader:
    """Sequential reader over a byte buffer that reports offsets on failure."""

    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int, item: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"{self.what}: truncated {item}: need {n} bytes, {len(self.buf) - self.pos} left",
                self.pos,
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, item: str) -> int:
        return struct.unpack("<I", self.take(4, item))[0]

    def magic(self, expected: bytes):
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {expected!r}", 0)

    def version(self):
        at = self.pos
        v = self.u32("version")
        if v != FORMAT_VERSION:
            raise FormatError(f"{self.what}: unsupported version {v}", at)

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes", self.pos)


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()


# ---------------------------------------------------------------- tractograms


def encode_tractogram(streamlines) -> bytes:
    parts = [STRM_MAGIC, struct.pack("<II", FORMAT_VERSION, len(streamlines))]
    for s in streamlines:
        pts = np.asarray(s, dtype="<f4")
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"streamline must be (n, 3), got {pts.shape}")
        parts.append(struct.pack("<I", len(pts)))
        parts.append(pts.tobytes())
    return b"".join(parts)


def decode_tractogram(buf: bytes) -> list:
    """Streamlines as float32 ``(n, 3)`` arrays."""
    r = _Reader(buf, "tractogram")
    r.magic(STRM_MAGIC)
    r.version()
    count = r.u32("streamline count")
    out = []
    for i in range(count):
        npts = r.u32(f"point count of streamline {i}")
        data = r.take(12 * npts, f"points of streamline {i}")
        out.append(np.frombuffer(data, dtype="<f4").reshape(npts, 3).astype(np.float32))
    r.done()
    return out


def write_tractogram(path, streamlines):
    Path(path).write_bytes(encode_tractogram(streamlines))


def read_tractogram(path) -> list:
    return decode_tractogram(_read_bytes(path))


# ---------------------------------------------------------------- volumes


def encode_volume(v: Volume) -> bytes:
    code = 1 if v.is_label else 0
    g = v.grid
    header = _VOL_HEADER.pack(VOL_MAGIC, code, v.channels, *g.dims, *g.spacing, *g.origin)
    # (X, Y, Z, C) -> x fastest, channels interleaved: memory order (Z, Y, X, C)
    data = np.ascontiguousarray(v.data.transpose(2, 1, 0, 3), dtype=_VOL_DTYPES[code])
    return header + data.tobytes()


def decode_volume(buf: bytes) -> Volume:
    r = _Reader(buf, "volume")
    r.magic(VOL_MAGIC)
    r.pos = 0
    magic, code, channels, *rest = _VOL_HEADER.unpack(r.take(_VOL_HEADER.size, "header"))
    dims, spacing, origin = rest[:3], rest[3:6], rest[6:9]
    if code not in _VOL_DTYPES:
        raise FormatError(f"volume: unknown dtype code {code}", 4)
    dt = _VOL_DTYPES[code]
    expected = channels * int(np.prod(dims)) * dt.itemsize
    actual = len(buf) - _VOL_HEADER.size
    if actual != expected:
        raise FormatError(
            f"volume: payload is {actual} bytes, expected {expected} "
            f"({channels} channels x {dims} voxels x {dt.itemsize} bytes)",
            _VOL_HEADER.size,
        )
    data = np.frombuffer(buf, dtype=dt, offset=_VOL_HEADER.size)
    data = data.reshape(dims[2], dims[1], dims[0], channels).transpose(2, 1, 0, 3)
    grid = VolumeGrid(dims, np.float32(spacing), np.float32(origin))
    data = np.ascontiguousarray(data, dtype=np.uint32 if code else np.float32)
    return Volume(grid, data, is_label=bool(code))


def write_volume(path, v: Volume):
    Path(path).write_bytes(encode_volume(v))


def read_volume(path) -> Volume:
    return decode_volume(_read_bytes(path))


# ---------------------------------------------------------------- labels


def encode_labels(verdicts) -> str:
    lines = [LABEL_HEADER]
    for i, v in enumerate(verdicts):
        code = v if isinstance(v, str) else compose(v)
        lines.append(f"{i}," + ",".join(code))
    return "\n".join(lines) + "\n"


def decode_labels(text: str) -> list:
    """Composition codes in streamline order. Errors cite the 1-based line number."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != LABEL_HEADER:
        raise FormatError(f"labels: header must be {LABEL_HEADER!r}", 1)
    codes = []
    for row, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 5:
            raise FormatError(f"labels: row {row} has {len(fields)} fields, expected 5", row)
        try:
            idx = int(fields[0])
        except ValueError:
            raise FormatError(f"labels: row {row}: bad index {fields[0]!r}", row) from None
        if idx != len(codes):
            raise FormatError(f"labels: row {row}: index {idx}, expected {len(codes)}", row)
        bad = [t for t in fields[1:] if t not in ("p", "n")]
        if bad:
            raise FormatError(f"labels: row {row}: invalid token {bad[0]!r}", row)
        codes.append("".join(fields[1:]))
    return codes


def write_labels(path, verdicts):
    Path(path).write_text(encode_labels(verdicts), newline="\n")


def read_labels(path) -> list:
    return decode_labels(Path(path).read_text())


def import_labels(path, n_streamlines: int) -> list:
    """Read externally produced labels and check they cover the tractogram."""
    codes = read_labels(path)
    if len(codes) != n_streamlines:
        raise FormatError(f"labels: {len(codes)} rows for {n_streamlines} streamlines")
    return codes


# ---------------------------------------------------------------- descriptors


def encode_descriptors(items) -> bytes:
    items = list(items)
    if not items:
        raise ValueError("no descriptors to write")
    n = items[0].xyz.shape[1]
    chans = [getattr(items[0], name).shape[0] for name in DESCRIPTOR_NAMES]
    parts = [DSC_MAGIC, struct.pack("<III", FORMAT_VERSION, len(items), n), struct.pack("<5I", *chans)]
    for d in items:
        parts.append(struct.pack("<I", int(d.valid_len)))
        for name, c in zip(DESCRIPTOR_NAMES, chans):
            arr = np.asarray(getattr(d, name), dtype="<f4")
            if arr.shape != (c, n):
                raise ValueError(f"{name}: shape {arr.shape}, expected {(c, n)}")
            parts.append(arr.tobytes())
    return b"".join(parts)


def decode_descriptors(buf: bytes) -> list:
    r = _Reader(buf, "descriptors")
    r.magic(DSC_MAGIC)
    r.version()
    count = r.u32("count")
    n = r.u32("N")
    chans = [r.u32(f"{name} channels") for name in DESCRIPTOR_NAMES]
    out = []
    for i in range(count):
        valid = r.u32(f"valid length of record {i}")
        arrays = {}
        for name, c in zip(DESCRIPTOR_NAMES, chans):
            data = r.take(4 * c * n, f"{name} of record {i}")
            arrays[name] = np.frombuffer(data, dtype="<f4").reshape(c, n).astype(np.float32)
        out.append(DescriptorSet(**arrays, valid_len=valid))
    r.done()
    return out


def write_descriptors(path, items):
    Path(path).write_bytes(encode_descriptors(items))


def read_descriptors(path) -> list:
    return decode_descriptors(_read_bytes(path))


# ---------------------------------------------------------------- checkpoints


def encode_checkpoint(state: dict, config: dict, meta: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = np.asarray(state[name])
        dt = arr.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"config": config, "meta": meta or {}, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    return CKPT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def decode_checkpoint(buf: bytes):
    """Returns ``(state, config, meta)``."""
    r = _Reader(buf, "checkpoint")
    r.magic(CKPT_MAGIC)
    r.version()
    hlen = r.u32("header length")
    at = r.pos
    try:
        header = json.loads(r.take(hlen, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"checkpoint: unreadable header ({e})", at) from None
    if not isinstance(header, dict) or not {"config", "meta", "tensors"} <= set(header):
        raise FormatError("checkpoint: header lacks config/meta/tensors", at)
    base = r.pos
    state = {}
    end = base
    for e in header["tensors"]:
        dt = np.dtype(e["dtype"])
        size = dt.itemsize * int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        if start + size > len(buf):
            raise FormatError(f"checkpoint: tensor {e['name']} runs past end of file", start)
        arr = np.frombuffer(buf, dtype=dt, count=size // dt.itemsize, offset=start)
        state[e["name"]] = arr.reshape(e["shape"]).astype(dt.newbyteorder("="))
        end = max(end, start + size)
    if end != len(buf):
        raise FormatError(f"checkpoint: {len(buf) - end} trailing bytes", end)
    return state, header["config"], header["meta"]


def write_checkpoint(path, state: dict, config: dict, meta: dict | None = None):
    Path(path).write_bytes(encode_checkpoint(state, config, meta))


def read_checkpoint(path):
    return decode_checkpoint(_read_bytes(path))


# ---------------------------------------------------------------- JSON objects


def atlas_to_json(atlas: BundleAtlas) -> dict:
    return {
        "bundles": [
            {"name": b.name, "threshold": b.threshold, "prototypes": np.asarray(b.prototypes).tolist()}
            for b in atlas.bundles
        ]
    }


def atlas_from_json(d: dict) -> BundleAtlas:
    try:
        return BundleAtlas(
            tuple(
                AtlasBundle(b["name"], np.asarray(b["prototypes"], dtype=np.float64), float(b["threshold"]))
                for b in d["bundles"]
            )
        )
    except (KeyError, TypeError) as e:
        raise FormatError(f"atlas: missing or malformed field {e}") from None


def queries_to_json(queries) -> list:
    return [
        {
            "name": q.name,
            "endpoint_a": sorted(q.endpoint_a),
            "endpoint_b": sorted(q.endpoint_b),
            "include": sorted(q.include),
            "exclude": sorted(q.exclude),
        }
        for q in queries
    ]


def queries_from_json(items) -> list:
    try:
        return [
            RegionQuery(
                q["name"],
                frozenset(q["endpoint_a"]),
                frozenset(q["endpoint_b"]),
                frozenset(q.get("include", ())),
                frozenset(q.get("exclude", ())),
            )
            for q in items
        ]
    except (KeyError, TypeError) as e:
        raise FormatError(f"queries: missing or malformed field {e}") from None


def scheme_to_json(scheme: GradientScheme) -> dict:
    return {"directions": scheme.directions.tolist(), "bvals": scheme.bvals.tolist()}


def scheme_from_json(d: dict) -> GradientScheme:
    try:
        return GradientScheme(np.asarray(d["directions"]), np.asarray(d["bvals"]))
    except (KeyError, TypeError) as e:
        raise FormatError(f"gradient scheme: missing or malformed field {e}") from None


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e.msg})", e.pos) from None


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- subject directories

# file names inside a subject directory
SUBJECT_FILES = {
    "tractogram": "tractogram.strm",
    "t1w": "t1w.vol",
    "sh": "sh.vol",
    "parcellation": "parcellation.vol",
    "deep_wm": "deep_wm.vol",
    "ventricles": "ventricles.vol",
    "atlas": "atlas.json",
    "queries": "queries.json",
    "bundles": "bundles.json",
    "labels": "labels.csv",
}


def write_bundle_masks(directory, bundles):
    directory = Path(directory)
    index = []
    for b in bundles:
        entry = {"name": b.name}
        for part in ("mask", "start", "end"):
            fname = f"bundle_{b.name}_{part}.vol"
            write_volume(directory / fname, getattr(b, part))
            entry[part] = fname
        index.append(entry)
    write_json(directory / SUBJECT_FILES["bundles"], index)


def read_bundle_masks(directory) -> list:
    directory = Path(directory)
    out = []
    for e in read_json(directory / SUBJECT_FILES["bundles"]):
        out.append(
            BundleMasks(
                e["name"],
                read_volume(directory / e["mask"]),
                read_volume(directory / e["start"]),
                read_volume(directory / e["end"]),
            )
        )
    return out
