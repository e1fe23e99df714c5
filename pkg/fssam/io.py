"""
FSSF feature/mask files, episode directories and PGM dumps.

FSSF layout (little-endian):
    magic    4 bytes  b"FSSF"
    version  u16      1
    kind     u16      0 = feature map, 1 = mask
    height   u32
    width    u32
    channels u32      1 for masks
    payload  float32  row-major, channel-minor, 4*H*W*C bytes
"""

import json
import logging
import os
import struct
from typing import List, Tuple, Union

import numpy as np

from .errors import (FeatureFileError, BadMagicError, UnsupportedVersionError,
                     TruncatedPayloadError, MaskRangeViolationError)
from .models import Episode, FeatureMap, SoftMask

logger = logging.getLogger(__name__)

MAGIC = b'FSSF'
VERSION = 1
KIND_FEATURES = 0
KIND_MASK = 1
HEADER = struct.Struct('<4sHHIII')


def write_feature_file(path: str, value: Union[FeatureMap, SoftMask]) -> None:
    """Write a feature map or mask as an FSSF file"""
    if isinstance(value, FeatureMap):
        kind, data = KIND_FEATURES, value.data
    elif isinstance(value, SoftMask):
        kind, data = KIND_MASK, value.data[..., None]
    else:
        raise TypeError(f"cannot write {type(value).__name__} as a feature file")
    height, width, channels = data.shape
    payload = np.ascontiguousarray(data, dtype='<f4').tobytes()
    with open(path, 'wb') as f:
        f.write(HEADER.pack(MAGIC, VERSION, kind, height, width, channels))
        f.write(payload)


def read_feature_file(path: str) -> Union[FeatureMap, SoftMask]:
    """Read an FSSF file; masks are checked to lie in [0, 1]"""
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < HEADER.size:
        if raw[:4] and raw[:4] != MAGIC[:len(raw[:4])]:
            raise BadMagicError(f"{path}: not an FSSF file")
        raise TruncatedPayloadError(f"{path}: header is {len(raw)} bytes, expected {HEADER.size}")
    magic, version, kind, height, width, channels = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if kind not in (KIND_FEATURES, KIND_MASK):
        raise FeatureFileError(f"{path}: unknown kind {kind}")
    if kind == KIND_MASK and channels != 1:
        raise FeatureFileError(f"{path}: mask files must have 1 channel, got {channels}")

    expected = 4 * height * width * channels
    payload = raw[HEADER.size:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FeatureFileError(f"{path}: {len(payload) - expected} trailing bytes")

    data = np.frombuffer(payload, dtype='<f4').astype(np.float64).reshape(height, width, channels)
    if not np.all(np.isfinite(data)):
        raise FeatureFileError(f"{path}: payload contains non-finite values")
    if kind == KIND_MASK:
        if data.min() < 0.0 or data.max() > 1.0:
            raise MaskRangeViolationError(
                f"{path}: mask values span [{data.min()}, {data.max()}], outside [0, 1]")
        return SoftMask(data[..., 0])
    return FeatureMap(data)


def write_pgm(path: str, grid: np.ndarray) -> None:
    """Write a [0, 1] grid as a binary (P5) PGM with maxval 255"""
    grid = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    if grid.ndim != 2:
        raise ValueError(f"PGM needs a 2-D grid, got shape {grid.shape}")
    pixels = np.round(grid * 255).astype(np.uint8)
    height, width = pixels.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n255\n".encode('ascii'))
        f.write(pixels.tobytes())


def write_episodes(directory: str, episodes: List[Episode]) -> None:
    """
    Write episodes as episode_NNNN/ folders of FSSF files plus meta.json.
    """
    os.makedirs(directory, exist_ok=True)
    for index, ep in enumerate(episodes):
        folder = os.path.join(directory, f"episode_{index:04d}")
        os.makedirs(folder, exist_ok=True)
        write_feature_file(os.path.join(folder, 'query.fssf'), ep.query_feats)
        write_feature_file(os.path.join(folder, 'query_mask.fssf'), ep.query_gt)
        for k, (feats, mask) in enumerate(ep.supports):
            write_feature_file(os.path.join(folder, f'support_{k}.fssf'), feats)
            write_feature_file(os.path.join(folder, f'support_{k}_mask.fssf'), mask)
        with open(os.path.join(folder, 'meta.json'), 'w', encoding='utf-8') as f:
            json.dump({'class_id': ep.class_id, 'shots': ep.shots}, f, indent=4)
    logger.info(f"Wrote {len(episodes)} episodes to {directory}")


def _read_typed(path: str, expected: type):
    value = read_feature_file(path)
    if not isinstance(value, expected):
        raise FeatureFileError(f"{path}: expected a {expected.__name__} file")
    return value


def _read_meta(folder: str) -> Tuple[int, int]:
    """Return (shots, class_id) from an episode's meta.json"""
    with open(os.path.join(folder, 'meta.json'), encoding='utf-8') as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise FeatureFileError(f"{folder}: meta.json is not valid JSON ({e})") from e
    if not isinstance(meta, dict):
        raise FeatureFileError(f"{folder}: meta.json must hold an object")
    missing = [key for key in ('shots', 'class_id') if key not in meta]
    if missing:
        raise FeatureFileError(f"{folder}: meta.json lacks {', '.join(missing)}")
    shots, class_id = meta['shots'], meta['class_id']
    if not isinstance(shots, int) or isinstance(shots, bool) or shots < 1:
        raise FeatureFileError(f"{folder}: meta.json shots must be a positive integer, got {shots!r}")
    if not isinstance(class_id, int) or isinstance(class_id, bool):
        raise FeatureFileError(f"{folder}: meta.json class_id must be an integer, got {class_id!r}")
    return shots, class_id


def read_episodes(directory: str, shots: int = None) -> List[Episode]:
    """Read an episode directory; `shots` keeps only the first k supports"""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"episode directory not found: {directory}")
    folders = sorted(name for name in os.listdir(directory) if name.startswith('episode_'))
    episodes = []
    for name in folders:
        folder = os.path.join(directory, name)
        available, class_id = _read_meta(folder)
        k = available if shots is None else min(shots, available)
        if shots is not None and shots > available:
            logger.warning(f"{name} has only {available} supports; using all of them")
        supports = [
            (_read_typed(os.path.join(folder, f'support_{i}.fssf'), FeatureMap),
             _read_typed(os.path.join(folder, f'support_{i}_mask.fssf'), SoftMask))
            for i in range(k)
        ]
        episodes.append(Episode(
            query_feats=_read_typed(os.path.join(folder, 'query.fssf'), FeatureMap),
            query_gt=_read_typed(os.path.join(folder, 'query_mask.fssf'), SoftMask),
            supports=supports,
            class_id=class_id,
        ))
    logger.info(f"Read {len(episodes)} episodes from {directory}")
    return episodes
