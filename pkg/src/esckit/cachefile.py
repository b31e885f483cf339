"""Binary feature-cache container (magic LGT1, little-endian).

Layout: 4-byte magic "LGT1", u32 version, u32 segment count, then per
segment: u16 clip-id byte length + UTF-8 clip id, u32 segment index,
u32 label, u32 fold, (version 2 only) u8 augmented flag, then 128*128*2
float32 values in (band, frame, channel) row-major order. Version 1 carries
no flag byte; readers treat its segments as non-augmented. Unknown magic or
version is rejected. Writes go through a temp file and an atomic rename so a
torn cache never exists under the target name.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .data import SegmentDataset
from .features import LogGTSegment

CACHE_MAGIC = b"LGT1"
CACHE_VERSIONS = (1, 2)
CACHE_SEGMENT_SHAPE = (128, 128, 2)


class CacheFormatError(ValueError):
    """Cache bytes do not follow the LGT container format."""


def write_cache(path, segments, version=2):
    if version not in CACHE_VERSIONS:
        raise CacheFormatError(f"unsupported cache version {version}")
    chunks = [CACHE_MAGIC, struct.pack("<II", version, len(segments))]
    for seg in segments:
        if seg.values.shape != CACHE_SEGMENT_SHAPE:
            raise CacheFormatError(f"segment {seg.clip_id!r}#{seg.segment_index} has shape "
                                   f"{seg.values.shape}, cache stores {CACHE_SEGMENT_SHAPE}")
        if version == 1 and seg.augmented:
            raise CacheFormatError("version 1 caches cannot mark augmented segments")
        clip_id = seg.clip_id.encode("utf-8")
        chunks.append(struct.pack("<H", len(clip_id)))
        chunks.append(clip_id)
        chunks.append(struct.pack("<III", seg.segment_index, seg.label, seg.fold))
        if version == 2:
            chunks.append(struct.pack("<B", int(seg.augmented)))
        chunks.append(np.ascontiguousarray(seg.values, dtype="<f4").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def read_cache(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CACHE_MAGIC:
        raise CacheFormatError(f"bad magic {blob[:4]!r}, expected {CACHE_MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version not in CACHE_VERSIONS:
        raise CacheFormatError(f"unsupported cache version {version}")
    n_values = int(np.prod(CACHE_SEGMENT_SHAPE))
    offset = 12
    segments = []
    try:
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            clip_id = blob[offset:offset + id_len].decode("utf-8")
            offset += id_len
            index, label, fold = struct.unpack_from("<III", blob, offset)
            offset += 12
            augmented = False
            if version == 2:
                (flag,) = struct.unpack_from("<B", blob, offset)
                offset += 1
                augmented = bool(flag)
            if offset + 4 * n_values > len(blob):
                raise struct.error("truncated segment data")
            values = np.frombuffer(blob, dtype="<f4", count=n_values, offset=offset)
            offset += 4 * n_values
            segments.append(LogGTSegment(values=values.reshape(CACHE_SEGMENT_SHAPE).copy(),
                                         clip_id=clip_id, segment_index=index, label=label,
                                         fold=fold, augmented=augmented))
    except struct.error as exc:
        raise CacheFormatError(f"truncated cache at byte {offset}: {exc}") from exc
    if offset != len(blob):
        raise CacheFormatError(f"{len(blob) - offset} trailing bytes after {count} segments")
    return segments


def read_cache_dataset(path, num_classes=None, class_names=None):
    segments = read_cache(path)
    if num_classes is None:
        if not segments:
            raise CacheFormatError(f"cache {path} is empty and no class count was given")
        num_classes = max(s.label for s in segments) + 1
    return SegmentDataset(segments=segments, num_classes=num_classes,
                          class_names=class_names or {})
