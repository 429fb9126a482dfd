"""
Binary artifact formats.

Checkpoint (``DFCK``)::

    magic "DFCK" | u32 version | u32 entry count
    per entry: u32 name length | UTF-8 name | u32 rank | rank x u64 extents | f64 payload

Synthetic set (``DFSS``)::

    magic "DFSS" | u32 version | u64 n | u32 classes | u32 rank | rank x u64 image extents
    f64 images | i64 labels | f64 lambdas

All integers and payloads are little-endian. Writes go through a temporary file
and a rename, so a failed save never leaves a partial artifact behind.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import autodiff as ad
from .kkt import SyntheticSet
from .models import ModelError, ModelSpec, Parameters, ARCHITECTURES
from .models.factory import check_params
from .util import DsvDistillError, atomic_write_bytes

CHECKPOINT_MAGIC = b"DFCK"
SYNTHETIC_MAGIC = b"DFSS"
CHECKPOINT_VERSION = 1
SYNTHETIC_VERSION = 1
META_PREFIX = "meta."


class ArtifactError(DsvDistillError):
    """Raised when an artifact cannot be read or does not match expectations."""


class _Reader:
    def __init__(self, payload: bytes, kind: str) -> None:
        self.payload = payload
        self.kind = kind
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if size < 0 or end > len(self.payload):
            raise ArtifactError(f"corrupt {self.kind}: truncated while reading {what}")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def array(self, count: int, dtype: str, what: str) -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * width, what), dtype=dtype).copy()

    def finish(self) -> None:
        if self.offset != len(self.payload):
            raise ArtifactError(f"corrupt {self.kind}: {len(self.payload) - self.offset} trailing bytes")


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc


def _check_magic(reader: _Reader, expected: bytes, version: int) -> None:
    magic = reader.take(4, "magic")
    if magic != expected:
        raise ArtifactError(f"bad magic in {reader.kind}: found {magic!r}, expected {expected!r}")
    found = reader.u32("version")
    if found != version:
        raise ArtifactError(f"unsupported {reader.kind} version {found} (expected {version})")


def _f64_bytes(tensor: torch.Tensor) -> bytes:
    return tensor.detach().to(ad.DTYPE).contiguous().numpy().astype("<f8", copy=False).tobytes()


# Checkpoints ---------------------------------------------------------------------


def spec_to_tensor(spec: ModelSpec) -> torch.Tensor:
    return torch.tensor(
        [ARCHITECTURES.index(spec.arch), *spec.input_shape, spec.num_classes, spec.width, spec.depth],
        dtype=ad.DTYPE,
    )


def spec_from_tensor(values: torch.Tensor) -> ModelSpec:
    if values.numel() != 7:
        raise ArtifactError(f"corrupt checkpoint: meta.spec has {values.numel()} values, expected 7")
    code, channels, height, width, classes, model_width, depth = (int(v) for v in values.tolist())
    if not 0 <= code < len(ARCHITECTURES):
        raise ArtifactError(f"corrupt checkpoint: unknown architecture code {code} in meta.spec")
    return ModelSpec(
        arch=ARCHITECTURES[code],
        input_shape=(channels, height, width),
        num_classes=classes,
        width=model_width,
        depth=depth,
    )


@dataclass(frozen=True)
class Checkpoint:
    params: Parameters
    extras: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def spec(self) -> ModelSpec | None:
        values = self.extras.get("meta.spec")
        return None if values is None else spec_from_tensor(values)

    @property
    def normalization(self) -> tuple[torch.Tensor, torch.Tensor] | None:
        if "meta.mean" in self.extras and "meta.std" in self.extras:
            return self.extras["meta.mean"], self.extras["meta.std"]
        return None


def save_checkpoint(
    params: Parameters,
    path: Path,
    *,
    spec: ModelSpec | None = None,
    extras: dict[str, torch.Tensor] | None = None,
) -> None:
    """Serialise ``params`` (plus optional ``meta.*`` entries) to ``path``."""
    entries: dict[str, torch.Tensor] = dict(params.items())
    if spec is not None:
        entries["meta.spec"] = spec_to_tensor(spec)
    for name, value in (extras or {}).items():
        entries[name if name.startswith(META_PREFIX) else META_PREFIX + name] = ad.as_tensor(value)

    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(entries))]
    for name, tensor in entries.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", tensor.dim()))
        chunks.append(struct.pack(f"<{tensor.dim()}Q", *tensor.shape))
        chunks.append(_f64_bytes(tensor))
    atomic_write_bytes(Path(path), b"".join(chunks))


def read_checkpoint(path: Path) -> Checkpoint:
    reader = _Reader(_read_bytes(path), "checkpoint")
    _check_magic(reader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    count = reader.u32("entry count")
    params: dict[str, torch.Tensor] = {}
    extras: dict[str, torch.Tensor] = {}
    for index in range(count):
        name_len = reader.u32(f"entry {index} name length")
        try:
            name = reader.take(name_len, f"entry {index} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArtifactError(f"corrupt checkpoint: entry {index} name is not UTF-8") from exc
        rank = reader.u32(f"entry {name!r} rank")
        shape = tuple(reader.u64(f"entry {name!r} extent {axis}") for axis in range(rank))
        values = reader.array(math.prod(shape), "<f8", f"entry {name!r} payload")
        tensor = torch.from_numpy(values.astype(np.float64)).reshape(shape)
        target = extras if name.startswith(META_PREFIX) else params
        if name in target:
            raise ArtifactError(f"corrupt checkpoint: duplicate entry {name!r}")
        target[name] = tensor
    reader.finish()
    return Checkpoint(params=Parameters(params), extras=extras)


def load_checkpoint(path: Path, spec: ModelSpec | None = None) -> Parameters:
    """
    Load parameters and verify them against ``spec`` (or the stored spec).

    Raises:
        ArtifactError: On bad magic, version or a truncated shape table
        ModelError: When the stored parameters do not fit the spec
    """
    checkpoint = read_checkpoint(path)
    target = spec or checkpoint.spec
    if target is not None:
        try:
            check_params(target, checkpoint.params)
        except ModelError as exc:
            raise ModelError(f"{path}: {exc}") from exc
    return checkpoint.params


# Synthetic sets ------------------------------------------------------------------


def save_synthetic(synthetic: SyntheticSet, path: Path) -> None:
    """Write images, labels and multipliers of ``synthetic`` to ``path``."""
    images = synthetic.images.detach()
    image_shape = tuple(images.shape[1:])
    chunks = [
        SYNTHETIC_MAGIC,
        struct.pack("<IQII", SYNTHETIC_VERSION, synthetic.n, synthetic.num_classes, len(image_shape)),
        struct.pack(f"<{len(image_shape)}Q", *image_shape),
        _f64_bytes(images),
        synthetic.labels.detach().to(torch.int64).numpy().astype("<i8", copy=False).tobytes(),
        _f64_bytes(synthetic.lambdas),
    ]
    atomic_write_bytes(Path(path), b"".join(chunks))


def load_synthetic(path: Path) -> SyntheticSet:
    reader = _Reader(_read_bytes(path), "synthetic set")
    _check_magic(reader, SYNTHETIC_MAGIC, SYNTHETIC_VERSION)
    n = reader.u64("image count")
    classes = reader.u32("class count")
    rank = reader.u32("image rank")
    shape = tuple(reader.u64(f"image extent {axis}") for axis in range(rank))
    images = reader.array(n * math.prod(shape), "<f8", "image payload")
    labels = reader.array(n, "<i8", "labels")
    lambdas = reader.array(n, "<f8", "lambdas")
    reader.finish()
    try:
        return SyntheticSet(
            images=torch.from_numpy(images.astype(np.float64)).reshape((n, *shape)),
            labels=torch.from_numpy(labels.astype(np.int64)),
            lambdas=torch.from_numpy(lambdas.astype(np.float64)),
            num_classes=classes,
        )
    except DsvDistillError as exc:
        raise ArtifactError(f"corrupt synthetic set {path}: {exc}") from exc
