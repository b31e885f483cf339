"""Dataset ingestion: metadata CSV, WAV decoding, and feature-cache building."""

from __future__ import annotations

import csv
import logging
import os
import struct
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .augment import augment_clip
from .cachefile import write_cache
from .features import SAMPLE_RATE, WaveClip, build_gammatone_filterbank, extract_segments

logger = logging.getLogger(__name__)

VARIANTS = ("esc10", "esc50", "custom")


class MetadataError(ValueError):
    """Metadata CSV is malformed or inconsistent."""


class AudioDecodeError(ValueError):
    """WAV bytes cannot be decoded."""


@dataclass
class ClipRecord:
    filename: str
    fold: int
    target: int
    category: str


def _parse_flag(value):
    return str(value).strip().lower() in ("true", "1", "yes")


def load_metadata(path, variant="esc50"):
    """ClipRecords from an ESC-style metadata CSV.

    Requires filename, fold, target and category columns. The esc10 variant
    filters on the esc10 flag column and remaps the surviving targets to 0-9
    in ascending original-target order. Malformed rows are reported with
    their line number.
    """
    if variant not in VARIANTS:
        raise MetadataError(f"unknown dataset variant {variant!r}; choose from {VARIANTS}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"filename", "fold", "target", "category"}
        if variant == "esc10":
            required.add("esc10")
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise MetadataError(f"{path}: missing columns {sorted(missing)}")
        records, seen = [], {}
        for line_no, row in enumerate(reader, start=2):
            name = row["filename"].strip()
            if not name:
                raise MetadataError(f"{path}:{line_no}: empty filename")
            if name in seen:
                raise MetadataError(f"{path}:{line_no}: duplicate filename {name!r} "
                                    f"(first at line {seen[name]})")
            seen[name] = line_no
            try:
                fold = int(row["fold"])
                target = int(row["target"])
            except ValueError as exc:
                raise MetadataError(f"{path}:{line_no}: {exc}") from exc
            if not 1 <= fold <= 5:
                raise MetadataError(f"{path}:{line_no}: fold {fold} outside 1..5")
            if target < 0:
                raise MetadataError(f"{path}:{line_no}: negative target {target}")
            if variant == "esc10" and not _parse_flag(row["esc10"]):
                continue
            records.append(ClipRecord(filename=name, fold=fold, target=target,
                                      category=row["category"].strip()))
    if not records:
        raise MetadataError(f"{path}: no records for variant {variant!r}")

    if variant == "esc10":
        remap = {old: new for new, old in enumerate(sorted({r.target for r in records}))}
        if len(remap) > 10:
            raise MetadataError(f"{path}: esc10 flag selects {len(remap)} classes, expected <= 10")
        records = [replace(r, target=remap[r.target]) for r in records]
        k = 10
    elif variant == "esc50":
        k = 50
    else:
        k = max(r.target for r in records) + 1
    for r in records:
        if r.target >= k:
            raise MetadataError(f"{path}: target {r.target} of {r.filename!r} outside [0, {k})")
    return records


def _find_chunks(blob, path):
    if len(blob) < 12 or blob[:4] != b"RIFF":
        raise AudioDecodeError(f"{path}: missing RIFF header at byte 0")
    if blob[8:12] != b"WAVE":
        raise AudioDecodeError(f"{path}: missing WAVE tag at byte 8")
    chunks = {}
    offset = 12
    while offset + 8 <= len(blob):
        cid = blob[offset:offset + 4]
        (size,) = struct.unpack_from("<I", blob, offset + 4)
        chunks.setdefault(cid, (offset + 8, size))
        offset += 8 + size + (size & 1)
    return chunks


def read_wav(path):
    """Decode a PCM16 or float32 RIFF/WAVE file into a mono 44.1 kHz WaveClip.

    Stereo is averaged to mono; 16-bit samples scale by 1/32768; other sample
    rates are linearly resampled to 44100 with a logged warning. Label and
    fold default to 0 until metadata is attached.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    chunks = _find_chunks(blob, path)
    if b"fmt " not in chunks or b"data" not in chunks:
        raise AudioDecodeError(f"{path}: missing fmt/data chunk")
    fmt_off, fmt_size = chunks[b"fmt "]
    if fmt_size < 16:
        raise AudioDecodeError(f"{path}: fmt chunk too short at byte {fmt_off}")
    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", blob, fmt_off)
    data_off, data_size = chunks[b"data"]
    data = blob[data_off:data_off + data_size]

    if audio_format == 1 and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise AudioDecodeError(f"{path}: unsupported codec (format {audio_format}, "
                               f"{bits}-bit) in fmt chunk at byte {fmt_off}")
    if channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    elif channels != 1:
        raise AudioDecodeError(f"{path}: {channels} channels unsupported")

    if rate != SAMPLE_RATE:
        logger.warning("%s: resampling %d Hz -> %d Hz (linear)", path, rate, SAMPLE_RATE)
        n_out = int(round(samples.size * SAMPLE_RATE / rate))
        samples = np.interp(np.linspace(0.0, samples.size - 1.0, num=n_out),
                            np.arange(samples.size), samples)
    return WaveClip(samples=samples, sample_rate=SAMPLE_RATE, label=0, fold=0,
                    clip_id=os.path.basename(path))


def _clip_rng(seed, clip_id):
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(clip_id.encode())]))


def build_cache(records, data_dir, augment_config, out_path, seed=0):
    """Extract raw (and optionally augmented) segments and write an LGT cache.

    Clips are processed in ascending filename order; each clip's augmentation
    randomness derives from the base seed and the filename alone, so rebuilds
    with the same seed are bitwise identical regardless of record order.
    Returns the number of segments written.
    """
    fb = build_gammatone_filterbank()
    segments = []
    for record in sorted(records, key=lambda r: r.filename):
        path = os.path.join(data_dir, record.filename)
        try:
            clip = read_wav(path)
        except OSError as exc:
            raise AudioDecodeError(f"cannot read {record.filename!r}: {exc}") from exc
        clip = replace(clip, label=record.target, fold=record.fold, clip_id=record.filename)
        segments.extend(extract_segments(clip, fb))
        if augment_config is not None and augment_config.copies_per_clip > 0:
            rng = _clip_rng(seed, record.filename)
            for copy in augment_clip(clip, augment_config, rng):
                segments.extend(extract_segments(copy, fb, augmented=True))
    write_cache(out_path, segments, version=2)
    return len(segments)
