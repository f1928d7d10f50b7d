"""Shared fixture helpers: crafting minimal PE images in memory."""

from __future__ import annotations

import struct
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

MACHINE_I386 = 0x014C
EXEC_CHARS = 0x60000020      # CODE | EXECUTE | READ
DATA_CHARS = 0x40000040      # INITIALIZED_DATA | READ

_LFANEW = 0x40
_OPT_HEADER_SIZE = 96        # PE32 without data directories


def build_pe(
    sections: list[tuple[bytes, int, bytes]],
    machine: int = MACHINE_I386,
    image_base: int = 0x400000,
    section_meta: list[dict] | None = None,
) -> bytes:
    """Assemble a parseable PE image from (name, characteristics, data)
    triples.  section_meta entries may override virtual_size / rva /
    raw_size per section."""
    meta = section_meta or [{} for _ in sections]
    coff_offset = _LFANEW + 4
    table_offset = coff_offset + 20 + _OPT_HEADER_SIZE
    data_offset = table_offset + 40 * len(sections)

    header = bytearray(data_offset)
    header[0:2] = b"MZ"
    struct.pack_into("<I", header, 0x3C, _LFANEW)
    header[_LFANEW:_LFANEW + 4] = b"PE\x00\x00"
    struct.pack_into(
        "<HHIIIHH", header, coff_offset,
        machine, len(sections), 0, 0, 0, _OPT_HEADER_SIZE, 0x0102,
    )
    opt_offset = coff_offset + 20
    struct.pack_into("<H", header, opt_offset, 0x10B)          # PE32 magic
    struct.pack_into("<I", header, opt_offset + 28, image_base)

    payload = bytearray()
    rva = 0x1000
    for i, (name, chars, data) in enumerate(sections):
        overrides = meta[i]
        raw_offset = data_offset + len(payload)
        vsize = overrides.get("virtual_size", len(data))
        rsize = overrides.get("raw_size", len(data))
        srva = overrides.get("rva", rva)
        struct.pack_into(
            "<8sIIIIIIHHI", header, table_offset + 40 * i,
            name, vsize, srva, rsize, raw_offset, 0, 0, 0, 0, chars,
        )
        payload.extend(data)
        rva = (srva + max(len(data), 0x1000) + 0xFFF) & ~0xFFF

    return bytes(header) + bytes(payload)


@pytest.fixture
def fixture_exes() -> list[Path]:
    return sorted(FIXTURES.glob("*.exe"))
