import struct
import zlib
from pathlib import Path
from typing import List, Tuple

from reverb_versa.models import ChecksumError, DatasetFormatError

# magic | u32 format version | u64 header length | header | u32 header CRC | blocks (payload + u32 CRC)
_PREAMBLE = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")


def read_file_content(file_path: Path) -> bytes:
    """Reads a file and returns its raw byte content."""
    with Path(file_path).open("rb") as f:
        content = f.read()
    return content


def save_bytes_to_file(file_path: Path, data: bytes) -> None:
    """Saves byte data to the specified file_path."""
    # Ensure parent directory exists
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("wb") as f:
        f.write(data)


def calculate_crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def frame_block(payload: bytes) -> bytes:
    """Payload followed by its CRC32."""
    return payload + _CRC.pack(calculate_crc32(payload))


def pack_container(magic: bytes, version: int, header: bytes, blocks: List[bytes]) -> bytes:
    parts = [_PREAMBLE.pack(magic, version, len(header)), frame_block(header)]
    parts.extend(frame_block(b) for b in blocks)
    return b"".join(parts)


def _take(data: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(data):
        raise DatasetFormatError(f"file truncated while reading {what} ({len(data) - offset} of {size} bytes left)")
    return data[offset:offset + size]


def _checked(data: bytes, offset: int, size: int, what: str) -> Tuple[bytes, int]:
    payload = _take(data, offset, size, what)
    (stored,) = _CRC.unpack(_take(data, offset + size, _CRC.size, f"{what} checksum"))
    if stored != calculate_crc32(payload):
        raise ChecksumError(f"CRC32 mismatch in {what}")
    return payload, offset + size + _CRC.size


def unpack_header(data: bytes, magic: bytes, version: int) -> Tuple[bytes, int]:
    """Validates the preamble and returns (header bytes, offset of the first block)."""
    found, found_version, header_len = _PREAMBLE.unpack(_take(data, 0, _PREAMBLE.size, "preamble"))
    if found != magic:
        raise DatasetFormatError(f"bad magic {found!r}, expected {magic!r}")
    if found_version != version:
        raise DatasetFormatError(f"format version {found_version} is not supported (expected {version})")
    return _checked(data, _PREAMBLE.size, header_len, "header")


def unpack_blocks(data: bytes, offset: int, block_size: int, count: int, what: str = "block") -> List[bytes]:
    """Reads `count` fixed-size CRC-framed blocks; trailing bytes are an error."""
    blocks = []
    for i in range(count):
        payload, offset = _checked(data, offset, block_size, f"{what} {i}")
        blocks.append(payload)
    if offset != len(data):
        raise DatasetFormatError(f"{len(data) - offset} unexpected trailing bytes")
    return blocks
