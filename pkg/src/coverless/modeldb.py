"""Generator serialization and the shared fingerprint-keyed model database.

Blob layout (all integers little-endian)::

    "CGM1" | version u32 | layer_count u32
    | per layer: kind u8, extent_count u8, extents u32...
    | tensor_count u32 | per tensor: rank u8, dims u32..., f32 data
    | training_seed u64 | crc32 of everything before it, u32
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import nn
from .adversarial import run_generator
from .errors import (CorruptModel, DuplicateId, FingerprintCollision, IoFailure,
                     NoMatchingModel, ShapeMismatch)
from .imaging import Fingerprint, ImageBuffer, fingerprint, hamming

MAGIC = b"CGM1"
FORMAT_VERSION = 1
KIND_CODES = {nn.CONV: 0, nn.TCONV: 1, nn.DENSE: 2, nn.LEAKY: 3, nn.TANH: 4}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}
DEFAULT_MATCH_THRESHOLD = 10
MANIFEST = "manifest.json"


@dataclass
class GeneratorModel:
    layers: list[nn.LayerSpec]
    params: list[np.ndarray]
    input_extents: tuple[int, int] | None = None
    training_seed: int = 0
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.layers = list(self.layers)
        self.params = [np.asarray(p, dtype=np.float32) for p in self.params]
        expected = [s for spec in self.layers for s in spec.param_shapes()]
        if [tuple(p.shape) for p in self.params] != expected:
            raise CorruptModel("parameter shapes do not match layer spec")
        if self.input_extents is not None:
            self.input_extents = tuple(int(v) for v in self.input_extents)
            self.network()

    @classmethod
    def from_network(cls, net: nn.Network, training_seed: int = 0) -> "GeneratorModel":
        _, h, w = net.input_shape
        return cls(net.layers, [p.copy() for p in net.params], (h, w), training_seed)

    def network(self, extents: tuple[int, int] | None = None) -> nn.Network:
        """Build a runnable network for ``extents`` (default: the registered extents)."""
        extents = extents or self.input_extents
        if extents is None:
            raise ShapeMismatch("model has no input extents; pass them explicitly")
        h, w = extents
        try:
            net = nn.Network(self.layers, (1, h, w), self.params, role=nn.GENERATOR)
        except ValueError as exc:
            raise ShapeMismatch(f"generator cannot run on {h}x{w}: {exc}") from None
        if math.prod(net.output_shape) != h * w:
            raise ShapeMismatch(f"generator output {net.output_shape} is not a {h}x{w} image")
        return net

    def generate(self, img: ImageBuffer) -> ImageBuffer:
        if self.input_extents is not None and img.shape != self.input_extents:
            raise ShapeMismatch(f"model expects {self.input_extents}, image is {img.shape}")
        return run_generator(self.network(img.shape), img)

    def bitwise_equal(self, other: "GeneratorModel") -> bool:
        return (self.layers == other.layers
                and self.training_seed == other.training_seed
                and len(self.params) == len(other.params)
                and all(a.shape == b.shape and a.tobytes() == b.tobytes()
                        for a, b in zip(self.params, other.params)))


def encode_model(m: GeneratorModel) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<II", m.format_version, len(m.layers))
    for spec in m.layers:
        ext = spec.extents()
        out += struct.pack("<BB", KIND_CODES[spec.kind], len(ext))
        out += struct.pack(f"<{len(ext)}I", *ext)
    out += struct.pack("<I", len(m.params))
    for p in m.params:
        out += struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape)
        out += np.ascontiguousarray(p, dtype="<f4").tobytes()
    out += struct.pack("<Q", m.training_seed & 0xFFFFFFFFFFFFFFFF)
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes, end: int):
        self.data, self.pos, self.end = data, 0, end

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > self.end:
            raise CorruptModel("model blob is truncated")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def raw(self, size: int) -> bytes:
        if self.pos + size > self.end:
            raise CorruptModel("model blob is truncated")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk


def decode_model(data: bytes, input_extents: tuple[int, int] | None = None) -> GeneratorModel:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptModel(f"bad magic {bytes(data[:4])!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CorruptModel(f"unsupported format version {version} (reader handles {FORMAT_VERSION})")
    if len(data) < 4 + 4 + 4 + 4 + 8 + 4:
        raise CorruptModel("model blob is truncated")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CorruptModel("checksum mismatch")
    r = _Reader(data, len(data) - 4)
    r.pos = 8
    (layer_count,) = r.take("<I")
    layers = []
    try:
        for _ in range(layer_count):
            code, n_ext = r.take("<BB")
            if code not in CODE_KINDS:
                raise CorruptModel(f"unknown layer kind code {code}")
            layers.append(nn.LayerSpec.from_extents(CODE_KINDS[code], r.take(f"<{n_ext}I")))
    except (ValueError, TypeError) as exc:
        raise CorruptModel(f"bad layer record: {exc}") from None
    (n_tensors,) = r.take("<I")
    params = []
    for _ in range(n_tensors):
        (rank,) = r.take("<B")
        dims = r.take(f"<{rank}I")
        count = math.prod(dims)
        params.append(np.frombuffer(r.raw(4 * count), dtype="<f4").astype(np.float32).reshape(dims))
    (seed,) = r.take("<Q")
    if r.pos != r.end:
        raise CorruptModel("trailing bytes before checksum")
    try:
        return GeneratorModel(layers, params, input_extents, seed, version)
    except ShapeMismatch as exc:
        raise CorruptModel(str(exc)) from None


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(m: GeneratorModel, path) -> None:
    try:
        _atomic_write(Path(path), encode_model(m))
    except OSError as exc:
        raise IoFailure(f"cannot write model {path}: {exc}") from exc


def load_model(path, input_extents: tuple[int, int] | None = None) -> GeneratorModel:
    """Read and validate a blob; the format does not carry extents, so pass them if known."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model {path}: {exc}") from exc
    return decode_model(data, input_extents)


# -- database -------------------------------------------------------------------

@dataclass
class ModelDbEntry:
    entry_id: str
    key_fingerprint: Fingerprint
    target_digest: str
    blob_filename: str
    input_width: int
    input_height: int
    created_at: str
    generator: GeneratorModel | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "key_fingerprint": self.key_fingerprint.hex(),
            "target_digest": self.target_digest,
            "blob_filename": self.blob_filename,
            "input_width": self.input_width,
            "input_height": self.input_height,
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelDbEntry":
        return cls(
            entry_id=obj["entry_id"],
            key_fingerprint=Fingerprint.from_hex(obj["key_fingerprint"]),
            target_digest=obj["target_digest"],
            blob_filename=obj["blob_filename"],
            input_width=int(obj["input_width"]),
            input_height=int(obj["input_height"]),
            created_at=obj["created_at"],
        )


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins timestamps for reproducible databases.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (datetime.fromtimestamp(int(epoch), timezone.utc) if epoch
              else datetime.now(timezone.utc))
    return moment.replace(microsecond=0).isoformat().replace("+00:00", "Z")


class ModelDatabase:
    """Directory holding ``manifest.json`` plus one ``<entry_id>.cgm`` blob per entry."""

    def __init__(self, root, match_threshold: int = DEFAULT_MATCH_THRESHOLD):
        self.root = Path(root)
        self.match_threshold = match_threshold
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create database {root}: {exc}") from exc
        self._lock = FileLock(str(self.root / ".lock"))
        self._cache: dict[str, GeneratorModel] = {}

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST

    def entries(self) -> list[ModelDbEntry]:
        if not self.manifest_path.exists():
            return []
        try:
            raw = json.loads(self.manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IoFailure(f"cannot read manifest: {exc}") from exc
        return [ModelDbEntry.from_json(o) for o in raw]

    def __len__(self) -> int:
        return len(self.entries())

    def _write_manifest(self, entries: list[ModelDbEntry]) -> None:
        text = json.dumps([e.to_json() for e in entries], indent=2) + "\n"
        _atomic_write(self.manifest_path, text.encode("utf-8"))

    def generator(self, entry: ModelDbEntry) -> GeneratorModel:
        if entry.entry_id not in self._cache:
            self._cache[entry.entry_id] = load_model(
                self.root / entry.blob_filename, (entry.input_height, entry.input_width))
        return self._cache[entry.entry_id]

    def register(self, key_img: ImageBuffer, generator: GeneratorModel, entry_id: str) -> ModelDbEntry:
        if not entry_id or "/" in entry_id or entry_id.startswith("."):
            raise ValueError(f"invalid entry id {entry_id!r}")
        h, w = key_img.shape
        generator = GeneratorModel(generator.layers, generator.params, (h, w),
                                   generator.training_seed, generator.format_version)
        output = generator.generate(key_img)
        key_fp = fingerprint(key_img)
        with self._lock:
            entries = self.entries()
            if any(e.entry_id == entry_id for e in entries):
                raise DuplicateId(f"entry id {entry_id!r} already registered")
            for e in entries:
                dist = hamming(e.key_fingerprint, key_fp)
                if dist <= self.match_threshold:
                    raise FingerprintCollision(
                        f"key is {dist} bits from entry {e.entry_id!r} "
                        f"(threshold {self.match_threshold})")
            entry = ModelDbEntry(entry_id, key_fp, output.digest(), f"{entry_id}.cgm",
                                 w, h, _timestamp(), generator)
            try:
                save_model(generator, self.root / entry.blob_filename)
                self._write_manifest(entries + [entry])
            except OSError as exc:
                raise IoFailure(f"cannot write database: {exc}") from exc
        self._cache[entry_id] = generator
        return entry

    def lookup(self, img: ImageBuffer) -> tuple[ModelDbEntry, int]:
        """Nearest entry by fingerprint distance; ties go to the smallest entry_id."""
        fp = fingerprint(img)
        best = None
        for e in self.entries():
            key = (hamming(e.key_fingerprint, fp), e.entry_id)
            if best is None or key < best[0]:
                best = (key, e)
        if best is None:
            raise NoMatchingModel("model database is empty")
        (dist, _), entry = best
        if dist > self.match_threshold:
            raise NoMatchingModel(
                f"nearest entry {entry.entry_id!r} is {dist} bits away "
                f"(threshold {self.match_threshold})")
        entry.generator = self.generator(entry)
        return entry, dist
