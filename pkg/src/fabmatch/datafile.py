"""Self-describing binary dataset files.

Layout: magic "GFDS", u32 version, u32 header length, JSON header (counts,
feature dim, seeds, split, config echo), then fabric records and observation
feature vectors. Features are stored as little-endian float32, so a
load/save round trip is byte-identical.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .dataplane import Dataset, FabricRecord, Modality, Observation
from .errors import BadMagicError, FileFormatError, FormatVersionError, TruncatedFileError

DATASET_MAGIC = b"GFDS"
DATASET_VERSION = 1

_FABRIC_STRUCT = struct.Struct("<IddBdi")
_OBS_STRUCT = struct.Struct("<IBI")
_MODALITIES = list(Modality)


def save_dataset(dataset: Dataset, path, config_echo: dict | None = None) -> None:
    header = {
        "feature_dim": dataset.feature_dim,
        "n_fabrics": len(dataset.fabrics),
        "n_observations": len(dataset.observations),
        "train_ids": list(dataset.train_ids),
        "test_ids": list(dataset.test_ids),
        "meta": dataset.meta,
        "config": config_echo,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [DATASET_MAGIC, struct.pack("<I", DATASET_VERSION), struct.pack("<I", len(blob)), blob]
    for f in dataset.fabrics:
        cluster = -1 if f.cluster_id is None else f.cluster_id
        parts.append(_FABRIC_STRUCT.pack(f.id, f.thickness_mm, f.stiffness_score,
                                         f.stretch_level, f.density_gsm, cluster))
    for obs in dataset.observations:
        parts.append(_OBS_STRUCT.pack(obs.fabric_id, _MODALITIES.index(obs.modality),
                                      obs.instance_index))
        parts.append(np.ascontiguousarray(obs.features, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFileError(f"dataset ends at byte {len(data)}, needed {pos + n}")
        out = data[pos : pos + n]
        pos += n
        return out

    magic = take(4)
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"bad dataset magic {magic!r}")
    (version,) = struct.unpack("<I", take(4))
    if version != DATASET_VERSION:
        raise FormatVersionError(f"dataset version {version}, supported {DATASET_VERSION}")
    (header_len,) = struct.unpack("<I", take(4))
    try:
        header = json.loads(take(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"bad dataset header: {exc}") from None

    feature_dim = header["feature_dim"]
    fabrics = []
    for _ in range(header["n_fabrics"]):
        fid, thickness, stiffness, stretch, density, cluster = _FABRIC_STRUCT.unpack(
            take(_FABRIC_STRUCT.size)
        )
        fabrics.append(FabricRecord(fid, thickness, stiffness, stretch, density,
                                    None if cluster < 0 else cluster))
    observations = []
    for _ in range(header["n_observations"]):
        fid, mod_code, instance = _OBS_STRUCT.unpack(take(_OBS_STRUCT.size))
        if mod_code >= len(_MODALITIES):
            raise FileFormatError(f"unknown modality code {mod_code}")
        features = np.frombuffer(take(4 * feature_dim), dtype="<f4").astype(np.float64)
        observations.append(Observation(fid, _MODALITIES[mod_code], instance, features))
    if pos != len(data):
        raise FileFormatError(f"{len(data) - pos} trailing bytes after observations")
    return Dataset(fabrics, observations, feature_dim,
                   header.get("train_ids", []), header.get("test_ids", []),
                   header.get("meta", {}) or {})
