"""Linear-sweep IA-32 instruction-length decoding and CFC recognition.

The decoder knows just enough of the IA-32 encoding to walk a code stream:
legacy prefixes, the full one-byte opcode map, the 0x0F two-byte map,
ModRM/SIB/displacement rules and immediate widths.  VEX/EVEX and the
three-byte 0x0F38/0x0F3A maps are rejected as invalid encodings.

Control-flow changes are the relative-displacement transfers only: short
and near conditional jumps, short and near unconditional jumps, and the
relative call.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import InvalidOpcodeError, TruncatedInstructionError
from .pe import ExecutableSection

MAX_INSTRUCTION_LEN = 15

# opcode attribute flags
_MODRM = 0x001
_I8 = 0x002      # byte immediate
_I16 = 0x004     # word immediate
_IZ = 0x008      # dword immediate, word under 0x66
_MOFFS = 0x010   # direct offset: dword, word under 0x67
_ENTER = 0x020   # iw + ib
_FAR = 0x040     # ptr16:16/32
_GRP3 = 0x080    # 0xF6/0xF7: immediate only for reg 0/1
_PREFIX = 0x100
_ESC = 0x200     # 0x0F escape
_BAD = 0x400
_MODRM_REG = 0x800   # one modrm byte, addressing bits ignored (mov cr/dr/tr)
_MEM_ONLY = 0x1000   # register-form modrm is undefined (also the VEX space)

PREFIX_BYTES = frozenset((0x26, 0x2E, 0x36, 0x3E, 0x64, 0x65, 0x66, 0x67, 0xF0, 0xF2, 0xF3))


def _one_byte_map() -> list[int]:
    t = [0] * 256
    # 0x00-0x3F: add/or/adc/sbb/and/sub/xor/cmp share one layout
    for base in range(0x00, 0x40, 0x08):
        for op in range(base, base + 4):
            t[op] = _MODRM
        t[base + 4] = _I8
        t[base + 5] = _IZ
    for b in (0x26, 0x2E, 0x36, 0x3E):   # segment overrides
        t[b] = _PREFIX
    t[0x0F] = _ESC
    # 0x40-0x5F inc/dec/push/pop reg: bare opcodes (flags stay 0)
    t[0x62] = _MODRM                     # bound
    t[0x63] = _MODRM                     # arpl
    t[0x64] = t[0x65] = _PREFIX          # fs/gs overrides
    t[0x66] = t[0x67] = _PREFIX          # operand/address size
    t[0x68] = _IZ                        # push imm
    t[0x69] = _MODRM | _IZ               # imul r, r/m, imm
    t[0x6A] = _I8
    t[0x6B] = _MODRM | _I8
    for b in range(0x70, 0x80):          # jcc rel8
        t[b] = _I8
    t[0x80] = _MODRM | _I8
    t[0x81] = _MODRM | _IZ
    t[0x82] = _MODRM | _I8
    t[0x83] = _MODRM | _I8
    for b in range(0x84, 0x90):          # test/xchg/mov/lea/pop
        t[b] = _MODRM
    t[0x9A] = _FAR                       # call far
    for b in range(0xA0, 0xA4):         # mov moffs
        t[b] = _MOFFS
    t[0xA8] = _I8
    t[0xA9] = _IZ
    for b in range(0xB0, 0xB8):         # mov reg8, imm8
        t[b] = _I8
    for b in range(0xB8, 0xC0):         # mov reg, imm
        t[b] = _IZ
    t[0xC0] = t[0xC1] = _MODRM | _I8     # shift groups
    t[0xC2] = _I16                       # ret imm16
    t[0xC4] = t[0xC5] = _MODRM           # les/lds
    t[0xC6] = _MODRM | _I8
    t[0xC7] = _MODRM | _IZ
    t[0xC8] = _ENTER
    t[0xCA] = _I16                       # retf imm16
    t[0xCD] = _I8                        # int imm8
    for b in range(0xD0, 0xD4):         # shift groups by 1/cl
        t[b] = _MODRM
    t[0xD4] = t[0xD5] = _I8              # aam/aad
    for b in range(0xD8, 0xE0):         # x87 escapes
        t[b] = _MODRM
    for b in range(0xE0, 0xE8):         # loop/jcxz/in/out imm8
        t[b] = _I8
    t[0xE8] = _IZ                        # call rel
    t[0xE9] = _IZ                        # jmp rel
    t[0xEA] = _FAR                       # jmp far
    t[0xEB] = _I8                        # jmp rel8
    t[0xF0] = _PREFIX                    # lock
    t[0xF2] = t[0xF3] = _PREFIX          # repne/rep
    t[0xF6] = _MODRM | _GRP3
    t[0xF7] = _MODRM | _GRP3
    t[0xFE] = t[0xFF] = _MODRM           # inc/dec/call/jmp/push groups
    return t


def _two_byte_map() -> list[int]:
    t = [_BAD] * 256
    for b in (0x00, 0x01, 0x02, 0x03, 0x0D):
        t[b] = _MODRM
    for b in (0x06, 0x08, 0x09, 0x0B):   # clts/invd/wbinvd/ud2
        t[b] = 0
    for b in range(0x10, 0x20):          # sse moves, hint nops (0F1F)
        t[b] = _MODRM
    for b in range(0x20, 0x24):          # mov cr/dr
        t[b] = _MODRM
    for b in range(0x28, 0x30):
        t[b] = _MODRM
    for b in range(0x30, 0x36):          # wrmsr..sysexit
        t[b] = 0
    t[0x37] = 0                          # getsec
    for b in range(0x40, 0x50):          # cmovcc
        t[b] = _MODRM
    for b in range(0x50, 0x70):          # sse/mmx arithmetic
        t[b] = _MODRM
    for b in range(0x70, 0x74):          # pshuf + shift groups
        t[b] = _MODRM | _I8
    for b in (0x74, 0x75, 0x76, 0x78, 0x79, 0x7C, 0x7D, 0x7E, 0x7F):
        t[b] = _MODRM
    t[0x77] = 0                          # emms
    for b in range(0x80, 0x90):          # jcc rel32
        t[b] = _IZ
    for b in range(0x90, 0xA0):          # setcc
        t[b] = _MODRM
    for b in (0xA0, 0xA1, 0xA2, 0xA8, 0xA9, 0xAA):
        t[b] = 0                         # push/pop fs/gs, cpuid, rsm
    for b in (0xA3, 0xA5, 0xAB, 0xAD, 0xAE, 0xAF):
        t[b] = _MODRM
    t[0xA4] = t[0xAC] = _MODRM | _I8     # shld/shrd imm8
    for b in range(0xB0, 0xC0):
        t[b] = _MODRM
    t[0xBA] = _MODRM | _I8               # bt group imm8
    t[0xC0] = t[0xC1] = _MODRM           # xadd
    t[0xC2] = _MODRM | _I8               # cmpps
    t[0xC3] = _MODRM                     # movnti
    t[0xC4] = t[0xC5] = t[0xC6] = _MODRM | _I8
    t[0xC7] = _MODRM                     # cmpxchg8b group
    for b in range(0xC8, 0xD0):          # bswap
        t[b] = 0
    for b in range(0xD0, 0x100):         # sse2 integer block, ud0
        t[b] = _MODRM
    return t


_ONE = _one_byte_map()
_TWO = _two_byte_map()


@dataclass(frozen=True)
class CfcRecord:
    """One relative control-flow change: opcode identity, section-relative
    address and the raw signed displacement (not the resolved target)."""

    opcode: tuple[int, ...]
    address: int
    displacement: int

    @property
    def opcode_hex(self) -> str:
        return "".join(f"{b:02x}" for b in self.opcode)


@dataclass(frozen=True)
class Instruction:
    offset: int
    length: int
    bytes: bytes
    cfc: CfcRecord | None = None


@dataclass(frozen=True)
class DecodeResult:
    instructions: tuple[Instruction, ...]
    resyncs: tuple[int, ...]  # offsets skipped after undecodable bytes


@dataclass(frozen=True)
class FilterReport:
    spans: tuple[tuple[int, int], ...]   # [start, end) UTF-16 text spans
    flagged: tuple[CfcRecord, ...]
    policy: str


def _modrm_span(data: bytes, i: int, addr16: bool) -> int:
    """Bytes consumed by ModRM + SIB + displacement starting at data[i]."""
    if i >= len(data):
        raise TruncatedInstructionError("modrm byte missing")
    modrm = data[i]
    mod = modrm >> 6
    rm = modrm & 7
    if mod == 3:
        return 1
    n = 1
    if addr16:
        if mod == 0 and rm == 6:
            n += 2
        elif mod == 1:
            n += 1
        elif mod == 2:
            n += 2
        return n
    if rm == 4:
        if i + 1 >= len(data):
            raise TruncatedInstructionError("sib byte missing")
        n += 1
        if mod == 0 and data[i + 1] & 7 == 5:
            n += 4
    if mod == 0 and rm == 5:
        n += 4
    elif mod == 1:
        n += 1
    elif mod == 2:
        n += 4
    return n


def decode_instruction(data: bytes, offset: int) -> Instruction:
    """Decode one instruction at offset, length only (no operand semantics)."""
    n = len(data)
    if offset >= n:
        raise TruncatedInstructionError("offset past end of data")

    i = offset
    opsize16 = False
    addr16 = False
    while _ONE[data[i]] & _PREFIX:
        if data[i] == 0x66:
            opsize16 = True
        elif data[i] == 0x67:
            addr16 = True
        i += 1
        if i - offset >= MAX_INSTRUCTION_LEN:
            raise InvalidOpcodeError("prefix run exceeds instruction limit")
        if i >= n:
            raise TruncatedInstructionError("prefixes run past end of data")

    opcode = data[i]
    if _ONE[opcode] & _ESC:
        i += 1
        if i >= n:
            raise TruncatedInstructionError("two-byte opcode missing")
        flags = _TWO[data[i]]
    else:
        flags = _ONE[opcode]
    if flags & _BAD:
        raise InvalidOpcodeError(f"undefined encoding at offset {offset}")
    i += 1

    reg = 0
    if flags & _MODRM:
        reg = (data[i] >> 3) & 7 if i < n else 0
        i += _modrm_span(data, i, addr16)

    imm = 0
    if flags & _I8:
        imm += 1
    if flags & _I16:
        imm += 2
    if flags & _IZ:
        imm += 2 if opsize16 else 4
    if flags & _MOFFS:
        imm += 2 if addr16 else 4
    if flags & _ENTER:
        imm += 3
    if flags & _FAR:
        imm += 2 + (2 if opsize16 else 4)
    if flags & _GRP3 and reg in (0, 1):  # test r/m, imm
        imm += 1 if opcode == 0xF6 else (2 if opsize16 else 4)

    length = i + imm - offset
    if length > MAX_INSTRUCTION_LEN:
        raise InvalidOpcodeError("instruction exceeds 15 bytes")
    if offset + length > n:
        raise TruncatedInstructionError("encoding runs past end of data")
    return Instruction(offset=offset, length=length, bytes=bytes(data[offset:offset + length]))


def instruction_length(data: bytes, offset: int) -> int:
    return decode_instruction(data, offset).length


def classify_cfc(instr: Instruction) -> CfcRecord | None:
    """CfcRecord for relative jcc/jmp/call instructions, else None.

    Pure function of the instruction bytes; the displacement is the raw
    sign-extended immediate.
    """
    bs = instr.bytes
    i = 0
    opsize16 = False
    while i < len(bs) and _ONE[bs[i]] & _PREFIX:
        if bs[i] == 0x66:
            opsize16 = True
        i += 1
    if i >= len(bs):
        return None
    b = bs[i]
    if 0x70 <= b <= 0x7F or b == 0xEB:
        disp = int.from_bytes(bs[i + 1:i + 2], "little", signed=True)
        return CfcRecord(opcode=(b,), address=instr.offset, displacement=disp)
    if b in (0xE8, 0xE9):
        width = 2 if opsize16 else 4
        disp = int.from_bytes(bs[i + 1:i + 1 + width], "little", signed=True)
        return CfcRecord(opcode=(b,), address=instr.offset, displacement=disp)
    if b == 0x0F and i + 1 < len(bs) and 0x80 <= bs[i + 1] <= 0x8F:
        width = 2 if opsize16 else 4
        disp = int.from_bytes(bs[i + 2:i + 2 + width], "little", signed=True)
        return CfcRecord(opcode=(0x0F, bs[i + 1]), address=instr.offset, displacement=disp)
    return None


def is_jcc(opcode: tuple[int, ...]) -> bool:
    if len(opcode) == 1:
        return 0x70 <= opcode[0] <= 0x7F
    return len(opcode) == 2 and opcode[0] == 0x0F and 0x80 <= opcode[1] <= 0x8F


def is_rel8(opcode: tuple[int, ...]) -> bool:
    return len(opcode) == 1 and (0x70 <= opcode[0] <= 0x7F or opcode[0] == 0xEB)


def decode_stream(section: ExecutableSection) -> DecodeResult:
    """Linear sweep from offset 0; undecodable bytes become 1-byte resync
    skips so that instruction lengths plus skips tile the section exactly."""
    data = section.data
    instructions: list[Instruction] = []
    resyncs: list[int] = []
    pos = 0
    while pos < len(data):
        try:
            instr = decode_instruction(data, pos)
        except (InvalidOpcodeError, TruncatedInstructionError):
            resyncs.append(pos)
            pos += 1
            continue
        cfc = classify_cfc(instr)
        if cfc is not None:
            instr = replace(instr, cfc=cfc)
        instructions.append(instr)
        pos += instr.length
    return DecodeResult(instructions=tuple(instructions), resyncs=tuple(resyncs))


def utf16_spans(data: bytes, min_pairs: int = 4) -> list[tuple[int, int]]:
    """Spans of >= min_pairs consecutive (printable, 0x00) byte pairs,
    the shape of embedded UTF-16LE text."""
    spans = []
    i = 0
    n = len(data)
    while i + 1 < n:
        if 0x20 <= data[i] <= 0x7E and data[i + 1] == 0:
            j = i
            while j + 1 < n and 0x20 <= data[j] <= 0x7E and data[j + 1] == 0:
                j += 2
            if (j - i) // 2 >= min_pairs:
                spans.append((i, j))
                i = j
            else:
                i += 1
        else:
            i += 1
    return spans


def data_in_code_filter(
    instructions: list[Instruction] | tuple[Instruction, ...],
    data: bytes,
    policy: str = "drop",
    min_pairs: int = 4,
) -> tuple[list[Instruction], FilterReport]:
    """Flag or drop CFC records decoded out of embedded UTF-16 text runs.

    policy "drop" clears the cfc on affected instructions; "flag" keeps
    them.  Either way the report lists every affected record.
    """
    if policy not in ("drop", "flag"):
        raise ValueError(f"unknown policy {policy!r}")
    spans = utf16_spans(data, min_pairs)
    flagged: list[CfcRecord] = []
    out: list[Instruction] = []
    for instr in instructions:
        if instr.cfc is not None and any(
            instr.offset < end and instr.offset + instr.length > start
            for start, end in spans
        ):
            flagged.append(instr.cfc)
            if policy == "drop":
                instr = replace(instr, cfc=None)
        out.append(instr)
    return out, FilterReport(spans=tuple(spans), flagged=tuple(flagged), policy=policy)
