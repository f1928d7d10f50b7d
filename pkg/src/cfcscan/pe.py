"""PE/COFF container parsing: section table extraction for IA-32 executables.

Only the pieces needed to locate executable code are parsed: DOS stub magic,
PE signature, COFF file header, the image base out of the optional header,
and the section table.  Imports, exports, resources and relocations are out
of scope.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import NotPeError, TruncatedError, UnsupportedMachineError

MZ_MAGIC = b"MZ"
PE_MAGIC = b"PE\x00\x00"

IMAGE_FILE_MACHINE_I386 = 0x014C

# Section characteristics bits
IMAGE_SCN_CNT_CODE = 0x00000020
IMAGE_SCN_MEM_EXECUTE = 0x20000000

_DOS_LFANEW_OFFSET = 0x3C
_COFF_HEADER_LEN = 20
_SECTION_HEADER_LEN = 40


@dataclass(frozen=True)
class SectionHeader:
    """One row of the COFF section table, byte-for-byte reconstructible."""

    name: bytes                 # opaque 8-byte tag, attacker-controlled
    virtual_size: int
    virtual_address: int
    raw_size: int
    raw_offset: int
    characteristics: int
    relocations_offset: int = 0
    linenumbers_offset: int = 0
    relocation_count: int = 0
    linenumber_count: int = 0
    truncated: bool = False     # raw_offset + raw_size past end of file

    @property
    def is_executable(self) -> bool:
        return bool(self.characteristics & (IMAGE_SCN_MEM_EXECUTE | IMAGE_SCN_CNT_CODE))

    def pack(self) -> bytes:
        """Re-serialize to the 40-byte on-disk layout."""
        return self.name.ljust(8, b"\x00")[:8] + struct.pack(
            "<IIIIIIHHI",
            self.virtual_size,
            self.virtual_address,
            self.raw_size,
            self.raw_offset,
            self.relocations_offset,
            self.linenumbers_offset,
            self.relocation_count,
            self.linenumber_count,
            self.characteristics,
        )


@dataclass(frozen=True)
class ExecutableSection:
    """Raw code bytes of one executable section plus location metadata."""

    name: bytes
    rva: int
    data: bytes
    source_file: str = ""


@dataclass(frozen=True)
class PeFile:
    dos_magic: bytes
    machine: int
    image_base: int
    section_headers: tuple[SectionHeader, ...]
    raw: bytes = field(repr=False)
    source: str = ""


def parse_pe(raw: bytes, source: str = "") -> PeFile:
    """Parse a PE/COFF image down to its section table.

    Raises NotPeError when the MZ or PE signature is absent, TruncatedError
    when header fields point past the end of the file, and
    UnsupportedMachineError for any COFF machine id other than IA-32.
    """
    if len(raw) < 2 or raw[:2] != MZ_MAGIC:
        raise NotPeError("missing MZ magic")
    if len(raw) < _DOS_LFANEW_OFFSET + 4:
        raise TruncatedError("file ends inside the DOS header")
    lfanew = struct.unpack_from("<I", raw, _DOS_LFANEW_OFFSET)[0]
    if lfanew + 4 > len(raw):
        raise TruncatedError("e_lfanew points past end of file")
    if raw[lfanew:lfanew + 4] != PE_MAGIC:
        raise NotPeError("missing PE signature")

    coff_offset = lfanew + 4
    if coff_offset + _COFF_HEADER_LEN > len(raw):
        raise TruncatedError("file ends inside the COFF header")
    machine, section_count, _, _, _, opt_header_size, _ = struct.unpack_from(
        "<HHIIIHH", raw, coff_offset
    )
    if machine != IMAGE_FILE_MACHINE_I386:
        raise UnsupportedMachineError(machine)

    opt_offset = coff_offset + _COFF_HEADER_LEN
    image_base = 0
    if opt_header_size >= 32 and opt_offset + 32 <= len(raw):
        image_base = struct.unpack_from("<I", raw, opt_offset + 28)[0]

    table_offset = opt_offset + opt_header_size
    table_end = table_offset + section_count * _SECTION_HEADER_LEN
    if table_end > len(raw):
        raise TruncatedError("section table runs past end of file")

    headers = []
    for i in range(section_count):
        off = table_offset + i * _SECTION_HEADER_LEN
        name = raw[off:off + 8]
        (vsize, vaddr, rsize, roff, reloc_off, lineno_off,
         n_reloc, n_lineno, chars) = struct.unpack_from("<IIIIIIHHI", raw, off + 8)
        headers.append(SectionHeader(
            name=name,
            virtual_size=vsize,
            virtual_address=vaddr,
            raw_size=rsize,
            raw_offset=roff,
            characteristics=chars,
            relocations_offset=reloc_off,
            linenumbers_offset=lineno_off,
            relocation_count=n_reloc,
            linenumber_count=n_lineno,
            truncated=roff + rsize > len(raw),
        ))

    return PeFile(
        dos_magic=raw[:2],
        machine=machine,
        image_base=image_base,
        section_headers=tuple(headers),
        raw=raw,
        source=source,
    )


def executable_sections(pe: PeFile) -> list[ExecutableSection]:
    """Sections carrying the memory-execute or contains-code bit, file order.

    Section bytes span min(raw_size, virtual_size); a zeroed virtual_size
    (common with packers) falls back to raw_size.  The slice never reads
    past the end of the file.
    """
    out = []
    for hdr in pe.section_headers:
        if not hdr.is_executable:
            continue
        length = hdr.raw_size if hdr.virtual_size == 0 else min(hdr.raw_size, hdr.virtual_size)
        data = pe.raw[hdr.raw_offset:hdr.raw_offset + length]
        out.append(ExecutableSection(
            name=hdr.name,
            rva=hdr.virtual_address,
            data=data,
            source_file=pe.source,
        ))
    return out
