"""Model output bundle and the PLFD binary container.

Layout (little-endian)::

    b"PLFD"  u32 version=1  u32 K  u32 image_height  u32 image_width
    u32 stride  u32 grid_height  u32 grid_width
    5 x [u32 channels, grid_height*grid_width*channels f32]   # heatmaps, short, mid, long, seg

Blocks are row-major, channel-minor.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .field import DimensionMismatch, FieldGrid

MAGIC = b"PLFD"
VERSION = 1
_HEADER = struct.Struct("<4s7I")
_U32 = struct.Struct("<I")

BLOCK_NAMES = ("heatmaps", "short_offsets", "mid_offsets", "long_offsets", "seg_prob")


class ContainerError(ValueError):
    """Base class for PLFD parse failures."""


class BadMagic(ContainerError):
    pass


class VersionMismatch(ContainerError):
    pass


class TruncatedPayload(ContainerError):
    pass


class ContainerDimensionMismatch(ContainerError, DimensionMismatch):
    pass


def expected_channels(num_keypoints: int) -> dict[str, int]:
    k = num_keypoints
    return {
        "heatmaps": k,
        "short_offsets": 2 * k,
        "mid_offsets": 4 * (k - 1),
        "long_offsets": 2 * k,
        "seg_prob": 1,
    }


@dataclass(frozen=True, eq=False)
class ModelOutputs:
    """The five field groups a network produces for one image."""

    heatmaps: FieldGrid
    short_offsets: FieldGrid
    mid_offsets: FieldGrid
    long_offsets: FieldGrid
    seg_prob: FieldGrid
    image_height: int
    image_width: int

    def __post_init__(self):
        grids = [getattr(self, name) for name in BLOCK_NAMES]
        ref = self.heatmaps
        for name, grid in zip(BLOCK_NAMES, grids):
            if (grid.height, grid.width, grid.stride) != (ref.height, ref.width, ref.stride):
                raise DimensionMismatch(
                    f"{name} grid is {grid.height}x{grid.width} at stride {grid.stride}, "
                    f"heatmaps are {ref.height}x{ref.width} at stride {ref.stride}")
        for name, want in expected_channels(ref.channels).items():
            got = getattr(self, name).channels
            if got != want:
                raise DimensionMismatch(f"{name} has {got} channels, expected {want}")

    @property
    def num_keypoints(self) -> int:
        return self.heatmaps.channels

    @property
    def stride(self) -> int:
        return self.heatmaps.stride

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.heatmaps.height, self.heatmaps.width

    def grids(self) -> dict[str, FieldGrid]:
        return {name: getattr(self, name) for name in BLOCK_NAMES}


def to_bytes(outputs: ModelOutputs) -> bytes:
    gh, gw = outputs.grid_shape
    parts = [_HEADER.pack(MAGIC, VERSION, outputs.num_keypoints, outputs.image_height,
                          outputs.image_width, outputs.stride, gh, gw)]
    for grid in outputs.grids().values():
        parts.append(_U32.pack(grid.channels))
        parts.append(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> ModelOutputs:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {bytes(buf[:4])!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, file has {len(buf)}")
    _, version, k, img_h, img_w, stride, gh, gw = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatch(f"container version {version}, reader supports {VERSION}")
    if k < 1 or stride < 1:
        raise ContainerDimensionMismatch(f"invalid header: K={k}, stride={stride}")
    want = expected_channels(k)
    pos = _HEADER.size
    grids = {}
    for name in BLOCK_NAMES:
        if pos + 4 > len(buf):
            raise TruncatedPayload(f"missing channel count for block {name}")
        (channels,) = _U32.unpack_from(buf, pos)
        pos += 4
        if channels != want[name]:
            raise ContainerDimensionMismatch(
                f"block {name} declares {channels} channels, expected {want[name]} for K={k}")
        nbytes = gh * gw * channels * 4
        if pos + nbytes > len(buf):
            raise TruncatedPayload(
                f"block {name} needs {nbytes} bytes, only {len(buf) - pos} remain")
        data = np.frombuffer(buf, dtype="<f4", count=gh * gw * channels, offset=pos)
        grids[name] = FieldGrid(data.astype(np.float32).reshape(gh, gw, channels), stride)
        pos += nbytes
    if pos != len(buf):
        raise ContainerDimensionMismatch(
            f"{len(buf) - pos} trailing bytes after the last block")
    return ModelOutputs(image_height=img_h, image_width=img_w, **grids)


def save_container(outputs: ModelOutputs, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(outputs))


def load_container(path: str | os.PathLike) -> ModelOutputs:
    with open(path, "rb") as f:
        return from_bytes(f.read())
