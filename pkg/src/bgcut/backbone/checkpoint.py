"""Binary checkpoint format.

Little-endian layout::

    magic "BGCT" | version u32 | tensor count u32
    per tensor: name length u32 | name (UTF-8) | dtype code u8 | rank u8
                | extents u32 × rank | payload offset u64
    payloads, back to back, offsets relative to the first payload byte
    CRC32 u32 of every preceding byte

A checkpoint holds one or more named graph groups. Group ``g`` stores its architecture
as ``g/__graph__`` (UTF-8 JSON in a uint8 tensor), parameters as ``g/param/<name>``,
batch-norm buffers as ``g/buffer/<name>`` and pruning masks as ``g/__mask__/<layer>``.
"""

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np
import structlog

from bgcut.backbone.graph import ModelGraph
from bgcut.errors import (
    ChecksumMismatchError,
    CheckpointError,
    MagicMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)

logger = structlog.get_logger()

MAGIC = b"BGCT"
FORMAT_VERSION = 1
HEADER_SIZE = 12
CRC_SIZE = 4

DTYPE_CODES: dict[np.dtype, int] = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<i8"): 4,
}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}

GRAPH_KEY = "__graph__"
MASK_KEY = "__mask__"


def _normalise(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype == np.bool_:
        array = array.astype(np.uint8)
    dtype = array.dtype.newbyteorder("<") if array.dtype.itemsize > 1 else array.dtype
    if dtype not in DTYPE_CODES:
        raise CheckpointError(f"unsupported tensor dtype {array.dtype}")
    return np.ascontiguousarray(array, dtype=dtype)


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialise named tensors to the checkpoint byte layout."""
    arrays = {name: _normalise(value) for name, value in tensors.items()}

    table = bytearray()
    offset = 0
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        table += struct.pack("<I", len(encoded)) + encoded
        table += struct.pack("<BB", DTYPE_CODES[array.dtype], array.ndim)
        table += struct.pack(f"<{array.ndim}I", *array.shape)
        table += struct.pack("<Q", offset)
        offset += array.nbytes

    body = bytearray(MAGIC + struct.pack("<II", FORMAT_VERSION, len(arrays)))
    body += table
    for array in arrays.values():
        body += array.tobytes()
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    return bytes(body)


MAX_RANK = 8

_Entry = tuple[str, np.dtype, tuple[int, ...], int]


class _Reader:
    def __init__(self, data: bytes, limit: int) -> None:
        self.data = data
        self.limit = limit
        self.pos = HEADER_SIZE

    def take(self, size: int) -> bytes:
        if self.pos + size > self.limit:
            raise TruncatedCheckpointError("checkpoint ends inside the tensor table")
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _tensor_name(raw: bytes) -> str:
    try:
        name = raw.decode("utf-8")
    except UnicodeDecodeError:
        name = ""
    if not name.isprintable():
        raise CheckpointError("tensor table holds an unreadable name")
    return name


def _read_table(data: bytes, count: int, limit: int) -> tuple[list[_Entry], int]:
    """Parse the tensor table; returns the entries and the first payload byte.

    Every field is checked against what the writer produces: printable names, known
    dtype codes, bounded ranks and offsets that follow the payload sizes in order.
    A table that is consistent up to ``limit`` raises TruncatedCheckpointError;
    any inconsistency raises a plain CheckpointError.
    """
    reader = _Reader(data, limit)
    entries: list[_Entry] = []
    running = 0
    for _ in range(count):
        (length,) = reader.unpack("<I")
        available = data[reader.pos : min(reader.pos + length, limit)]
        name = _tensor_name(available)
        reader.take(length)
        code, rank = reader.unpack("<BB")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for tensor {name}")
        if rank > MAX_RANK:
            raise CheckpointError(f"tensor {name} has rank {rank}")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        (offset,) = reader.unpack("<Q")
        if offset != running:
            raise CheckpointError(f"tensor {name} starts at {offset}, expected {running}")
        dtype = CODE_DTYPES[code]
        running += int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        entries.append((name, dtype, tuple(shape), offset))
    return entries, reader.pos


def _payload_size(entries: list[_Entry]) -> int:
    return sum(
        int(np.prod(shape, dtype=np.int64)) * dtype.itemsize for _, dtype, shape, _ in entries
    )


def _classify_damage(data: bytes, count: int) -> CheckpointError:
    """Tell a file cut short from one whose bytes changed, given a failed CRC32."""
    try:
        entries, payload_start = _read_table(data, count, len(data))
    except TruncatedCheckpointError as e:
        return e
    except CheckpointError as e:
        return ChecksumMismatchError(f"checkpoint CRC32 does not match its contents ({e})")
    expected = payload_start + _payload_size(entries) + CRC_SIZE
    if len(data) < expected:
        return TruncatedCheckpointError(
            f"checkpoint holds {len(data)} bytes, table declares {expected}"
        )
    return ChecksumMismatchError("checkpoint CRC32 does not match its contents")


def decode_tensors(data: bytes) -> dict[str, np.ndarray]:
    """Parse checkpoint bytes.

    The CRC32 is verified before the table is trusted. When it fails, the file is
    reported as truncated only if its table is intact and declares more bytes than
    the file holds; every other mismatch is a checksum failure.

    Raises:
        MagicMismatchError: If the file does not start with ``BGCT``
        VersionMismatchError: If the format version is unsupported
        TruncatedCheckpointError: If the file is shorter than its header or its table
        ChecksumMismatchError: If the trailing CRC32 does not match
    """
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicMismatchError("not a bgcut checkpoint (bad magic)")
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise TruncatedCheckpointError("checkpoint shorter than its header")
    version, count = struct.unpack("<II", data[4:HEADER_SIZE])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"checkpoint format version {version}, expected {FORMAT_VERSION}"
        )

    (stored_crc,) = struct.unpack("<I", data[-CRC_SIZE:])
    if zlib.crc32(data[:-CRC_SIZE]) & 0xFFFFFFFF != stored_crc:
        raise _classify_damage(data, count)

    entries, payload_start = _read_table(data, count, len(data) - CRC_SIZE)
    expected = payload_start + _payload_size(entries) + CRC_SIZE
    if len(data) != expected:
        raise CheckpointError(f"checkpoint holds {len(data)} bytes, table declares {expected}")

    tensors = {}
    for name, dtype, shape, offset in entries:
        items = int(np.prod(shape, dtype=np.int64))
        start = payload_start + offset
        tensors[name] = np.frombuffer(data, dtype=dtype, count=items, offset=start)
        tensors[name] = tensors[name].reshape(shape).copy()
    return tensors


def write_tensors(tensors: Mapping[str, np.ndarray], path: Union[str, Path]) -> int:
    """Atomically write named tensors; returns the file size in bytes."""
    path = Path(path)
    data = encode_tensors(tensors)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return len(data)


def read_tensors(path: Union[str, Path]) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_tensors(data)


def graph_tensors(model: ModelGraph, group: str) -> dict[str, np.ndarray]:
    """Flatten one graph into checkpoint tensors under ``group``."""
    header = {"name": model.name, "outputs": list(model.outputs)}
    spec = json.dumps(
        {**header, "layers": json.loads(model.layers_json())}, sort_keys=True
    ).encode("utf-8")

    tensors: dict[str, np.ndarray] = {f"{group}/{GRAPH_KEY}": np.frombuffer(spec, dtype=np.uint8)}
    for name, variable in model.params.items():
        tensors[f"{group}/param/{name}"] = variable.value
    for name, buffer in model.buffers.items():
        tensors[f"{group}/buffer/{name}"] = buffer
    for name, mask in model.masks.items():
        tensors[f"{group}/{MASK_KEY}/{name}"] = mask.astype(np.uint8)
    return tensors


def graph_from_tensors(tensors: Mapping[str, np.ndarray], group: str) -> ModelGraph:
    key = f"{group}/{GRAPH_KEY}"
    if key not in tensors:
        raise CheckpointError(f"checkpoint has no graph group {group!r}")
    spec = json.loads(tensors[key].tobytes().decode("utf-8"))

    def section(kind: str) -> dict[str, np.ndarray]:
        prefix = f"{group}/{kind}/"
        return {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}

    return ModelGraph(
        layers=ModelGraph.layers_from_json(json.dumps(spec["layers"]).encode("utf-8")),
        params=section("param"),
        buffers=section("buffer"),
        outputs=spec["outputs"],
        masks={k: v.astype(bool) for k, v in section(MASK_KEY).items()},
        name=spec["name"],
    )


def groups_in(tensors: Mapping[str, np.ndarray]) -> list[str]:
    suffix = f"/{GRAPH_KEY}"
    return [name[: -len(suffix)] for name in tensors if name.endswith(suffix)]


def save_bundle(
    groups: Mapping[str, ModelGraph],
    path: Union[str, Path],
    extra: Optional[Mapping[str, np.ndarray]] = None,
) -> int:
    """Write several graphs (and optional loose tensors) into one checkpoint file."""
    tensors: dict[str, np.ndarray] = {}
    for group, model in groups.items():
        tensors.update(graph_tensors(model, group))
    for name, value in (extra or {}).items():
        tensors[f"extra/{name}"] = value
    size = write_tensors(tensors, path)
    logger.info("Saved checkpoint", path=str(path), groups=list(groups), bytes=size)
    return size


def load_bundle(path: Union[str, Path]) -> tuple[dict[str, ModelGraph], dict[str, np.ndarray]]:
    """Read every graph group and the loose ``extra/`` tensors of a checkpoint."""
    tensors = read_tensors(path)
    groups = {group: graph_from_tensors(tensors, group) for group in groups_in(tensors)}
    extra = {k[len("extra/") :]: v for k, v in tensors.items() if k.startswith("extra/")}
    logger.debug("Loaded checkpoint", path=str(path), groups=list(groups))
    return groups, extra


def save_checkpoint(model: ModelGraph, path: Union[str, Path], group: str = "model") -> int:
    return save_bundle({group: model}, path)


def load_checkpoint(path: Union[str, Path], group: Optional[str] = None) -> ModelGraph:
    """Load one graph; ``group`` may be omitted when the file holds exactly one."""
    groups, _ = load_bundle(path)
    if group is None:
        if len(groups) != 1:
            raise CheckpointError(f"checkpoint holds groups {sorted(groups)}; name one")
        return next(iter(groups.values()))
    if group not in groups:
        raise CheckpointError(f"checkpoint has no graph group {group!r}")
    return groups[group]
