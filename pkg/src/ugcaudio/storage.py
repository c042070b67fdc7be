"""On-disk formats: binary fingerprint index, text model file, JSON report.

The index layout is fixed-width little-endian so a round trip is
byte-identical and a hexdump diff is readable:

    magic 'UGFP', u16 version=1, u32 rate, u16 window, u16 hop,
    u32 n_clips, per clip {u16 id length, id bytes, f64 duration, u32 #L},
    u64 n_postings, per posting {u32 key, u32 clip ordinal, u32 t1}

Model files are `key = value` text with repr'd floats, which round-trip
float64 exactly. Reports are JSON with sorted keys and a trailing newline.
"""

from __future__ import annotations

import json
import struct
from typing import Any

import numpy as np

from .fingerprint import FingerprintIndex, FpConfig
from .match_classifier import (
    FAMILY_KNN,
    FAMILY_LOGREG,
    KnnModel,
    LogRegModel,
    MatchFilter,
    Standardizer,
    parse_subset,
)

INDEX_MAGIC = b"UGFP"
INDEX_VERSION = 1
MODEL_VERSION = 1


class StorageError(Exception):
    pass


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise StorageError(
                f"truncated {self.what}: needed {size} bytes at offset {self.pos}"
            )
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def take_bytes(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise StorageError(
                f"truncated {self.what}: needed {size} bytes at offset {self.pos}"
            )
        out = self.data[self.pos : self.pos + size]
        self.pos += size
        return out


def index_to_bytes(index: FingerprintIndex) -> bytes:
    """Serialize with clips in sorted-id order and postings fully sorted."""
    clip_ids = index.clip_ids
    ordinal = {cid: i for i, cid in enumerate(clip_ids)}

    parts = [
        INDEX_MAGIC,
        struct.pack(
            "<HIHHI",
            INDEX_VERSION,
            index.cfg.rate,
            index.cfg.window,
            index.cfg.hop,
            len(clip_ids),
        ),
    ]
    for cid in clip_ids:
        raw = cid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise StorageError(f"clip id too long to store: {cid[:40]!r}...")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(
            struct.pack("<dI", index.durations[cid], index.landmark_counts[cid])
        )

    postings = sorted(
        (key, ordinal[cid], t1)
        for key, posts in index.postings.items()
        for cid, t1 in posts
    )
    parts.append(struct.pack("<Q", len(postings)))
    for key, ordn, t1 in postings:
        parts.append(struct.pack("<III", key, ordn, t1))
    return b"".join(parts)


def index_from_bytes(data: bytes) -> FingerprintIndex:
    r = _Reader(data, "index file")
    if r.take_bytes(4) != INDEX_MAGIC:
        raise StorageError("not an index file (bad magic)")
    (version,) = r.take("<H")
    if version != INDEX_VERSION:
        raise StorageError(f"unsupported version {version} (expected {INDEX_VERSION})")
    rate, window, hop, n_clips = r.take("<IHHI")
    index = FingerprintIndex(FpConfig(rate=rate, window=window, hop=hop))

    clip_ids: list[str] = []
    for _ in range(n_clips):
        (id_len,) = r.take("<H")
        cid = r.take_bytes(id_len).decode("utf-8")
        duration, n_landmarks = r.take("<dI")
        if cid in index.landmark_counts:
            raise StorageError(f"duplicate clip id {cid!r} in index file")
        clip_ids.append(cid)
        index.landmark_counts[cid] = n_landmarks
        index.durations[cid] = duration

    (n_postings,) = r.take("<Q")
    seen = {cid: 0 for cid in clip_ids}
    for _ in range(n_postings):
        key, ordn, t1 = r.take("<III")
        if ordn >= len(clip_ids):
            raise StorageError(f"posting references clip ordinal {ordn} of {len(clip_ids)}")
        cid = clip_ids[ordn]
        index.postings[key].append((cid, t1))
        seen[cid] += 1
    if r.pos != len(data):
        raise StorageError(f"{len(data) - r.pos} trailing bytes after postings")
    for cid, count in seen.items():
        if count != index.landmark_counts[cid]:
            raise StorageError(
                f"clip {cid!r} declares {index.landmark_counts[cid]} landmarks "
                f"but has {count} postings"
            )
    return index


def save_index(index: FingerprintIndex, path: str) -> None:
    with open(path, "wb") as f:
        f.write(index_to_bytes(index))


def load_index(path: str) -> FingerprintIndex:
    with open(path, "rb") as f:
        return index_from_bytes(f.read())


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel())


def _parse_floats(text: str) -> np.ndarray:
    if text == "":
        return np.zeros(0)
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def model_to_text(flt: MatchFilter, meta: dict[str, Any] | None = None) -> str:
    """Fixed field order so identical models serialize identically."""
    meta = meta or {}
    lines = [
        f"version = {MODEL_VERSION}",
        f"family = {flt.family}",
        f"subset = {flt.subset.name}",
        f"features = {','.join(flt.subset.fields)}",
        f"param = {repr(flt.param)}",
        f"mean = {_floats(flt.standardizer.mean)}",
        f"std = {_floats(flt.standardizer.std)}",
    ]
    if isinstance(flt.model, LogRegModel):
        lines.append(f"weights = {_floats(flt.model.weights)}")
        lines.append(f"bias = {repr(float(flt.model.bias))}")
    else:
        rows = ";".join(_floats(row) for row in flt.model.train_x)
        lines.append(f"train_x = {rows}")
        lines.append(f"train_y = {','.join(str(int(v)) for v in flt.model.train_y)}")
    for key in ("accuracy", "val_error", "wrong_fps", "degraded"):
        if key in meta:
            value = meta[key]
            lines.append(f"{key} = {repr(float(value)) if isinstance(value, float) else value}")
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> tuple[MatchFilter, dict[str, Any]]:
    fields: dict[str, str] = {}
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if " = " not in line:
            raise StorageError(f"model file line {i}: expected 'key = value'")
        key, value = line.split(" = ", 1)
        if key in fields:
            raise StorageError(f"model file line {i}: duplicate key {key!r}")
        fields[key] = value

    def need(key: str) -> str:
        if key not in fields:
            raise StorageError(f"model file missing field {key!r}")
        return fields[key]

    if need("version") != str(MODEL_VERSION):
        raise StorageError(
            f"unsupported version {fields['version']} (expected {MODEL_VERSION})"
        )
    family = need("family")
    subset = parse_subset(need("subset"))
    if need("features") != ",".join(subset.fields):
        raise StorageError("model file features do not match its subset")
    std = Standardizer(mean=_parse_floats(need("mean")), std=_parse_floats(need("std")))
    dim = len(subset.fields)
    if len(std.mean) != dim or len(std.std) != dim:
        raise StorageError("standardizer dimension does not match the feature subset")

    param = float(need("param"))
    if family == FAMILY_LOGREG:
        weights = _parse_floats(need("weights"))
        if len(weights) != dim:
            raise StorageError("weight dimension does not match the feature subset")
        model = LogRegModel(weights=weights, bias=float(need("bias")), c=param)
    elif family == FAMILY_KNN:
        rows = need("train_x").split(";")
        train_x = np.array([_parse_floats(row) for row in rows], dtype=np.float64)
        if train_x.ndim != 2 or train_x.shape[1] != dim:
            raise StorageError("training matrix does not match the feature subset")
        train_y = _parse_floats(need("train_y"))
        if len(train_y) != len(train_x):
            raise StorageError("training labels do not match the training matrix")
        model = KnnModel(k=int(param), train_x=train_x, train_y=train_y)
    else:
        raise StorageError(f"unknown model family {family!r}")

    meta: dict[str, Any] = {}
    for key in ("accuracy", "val_error"):
        if key in fields:
            meta[key] = float(fields[key])
    for key in ("wrong_fps", "degraded"):
        if key in fields:
            meta[key] = int(fields[key])
    flt = MatchFilter(subset=subset, standardizer=std, model=model)
    return flt, meta


def save_model(flt: MatchFilter, path: str, meta: dict[str, Any] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(model_to_text(flt, meta))


def load_model(path: str) -> tuple[MatchFilter, dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return model_from_text(f.read())


def dump_json(obj: Any) -> str:
    """Canonical form: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_json(obj: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_json(obj))


def load_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
