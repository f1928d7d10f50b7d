import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from cfcscan.disasm import (
    classify_cfc,
    data_in_code_filter,
    decode_instruction,
    decode_stream,
    instruction_length,
    is_jcc,
    is_rel8,
    utf16_spans,
)
from cfcscan.errors import InvalidOpcodeError, TruncatedInstructionError
from cfcscan.pe import ExecutableSection, executable_sections, parse_pe

from conftest import FIXTURES

PROLOGUE = bytes.fromhex("8bff558bec81ec1c020000a10030000133c5")


def _section(data: bytes) -> ExecutableSection:
    return ExecutableSection(name=b".text", rva=0, data=data)


@pytest.mark.parametrize("hex_bytes,expected", [
    ("8bff", 2),                # mov edi, edi
    ("81ec1c020000", 6),        # sub esp, 21Ch
    ("55", 1),                  # push ebp
    ("a100300001", 5),          # mov eax, [moffs]
    ("33c5", 2),                # xor eax, ebp
    ("8945fc", 3),              # mov [ebp-4], eax
    ("8b7510", 3),              # mov esi, [ebp+10h]
    ("e8fbffffff", 5),          # call rel32
    ("0f8410000000", 6),        # jz rel32
    ("7500", 2),                # jnz rel8
    ("c20800", 3),              # ret 8
    ("c8100002", 4),            # enter 0x10, 2
    ("668b4510", 4),            # opsize prefix + modrm disp8
    ("f7d8", 2),                # neg eax (group 3, reg=3, no imm)
    ("f7c078563412", 6),        # test eax, imm32 (group 3, reg=0)
    ("f6c101", 3),              # test cl, imm8
    ("8d0485????????".replace("????????", "44332211"), 7),  # lea eax,[eax*4+disp32]
    ("ff2500304000", 6),        # jmp [mem] (group 5)
    ("0f1f840000000000", 8),    # canonical long nop
    ("ea44332211aa00", 7),      # jmp far ptr16:32
])
def test_instruction_lengths(hex_bytes, expected):
    data = bytes.fromhex(hex_bytes)
    assert instruction_length(data, 0) == expected


def test_prologue_decodes_to_known_lengths():
    result = decode_stream(_section(PROLOGUE))
    assert [i.length for i in result.instructions] == [2, 1, 2, 6, 5, 2]
    assert result.resyncs == ()


def test_empty_section_gives_empty_stream():
    result = decode_stream(_section(b""))
    assert result.instructions == ()
    assert result.resyncs == ()


def test_int3_run_decodes_single_byte_each():
    result = decode_stream(_section(b"\xCC" * 9))
    assert len(result.instructions) == 9
    assert all(i.length == 1 for i in result.instructions)


def test_invalid_opcode_raises():
    with pytest.raises(InvalidOpcodeError):
        decode_instruction(b"\x0f\x04\x00", 0)
    with pytest.raises(InvalidOpcodeError):
        decode_instruction(b"\x0f\x38\x00\xc0", 0)  # three-byte map unsupported


def test_truncated_encoding_raises():
    with pytest.raises(TruncatedInstructionError):
        decode_instruction(b"\xe8\x01", 0)
    with pytest.raises(TruncatedInstructionError):
        decode_instruction(b"\x81", 0)
    with pytest.raises(TruncatedInstructionError):
        decode_instruction(b"\x66", 0)


def test_fifteen_byte_limit():
    assert instruction_length(b"\x66" * 10 + b"\x90", 0) == 11
    with pytest.raises(InvalidOpcodeError):
        decode_instruction(b"\x66" * 20 + b"\x90", 0)


def test_classify_jnz_zero_displacement():
    instr = decode_instruction(b"\x75\x00", 0)
    rec = classify_cfc(instr)
    assert rec.opcode == (0x75,)
    assert rec.displacement == 0


def test_classify_call_sign_extension():
    rec = classify_cfc(decode_instruction(b"\xe8\xfb\xff\xff\xff", 0))
    assert rec.opcode == (0xE8,)
    assert rec.displacement == -5


def test_classify_mov_is_not_cfc():
    assert classify_cfc(decode_instruction(b"\x8b\xff", 0)) is None


def test_classify_near_jcc():
    rec = classify_cfc(decode_instruction(b"\x0f\x84\x10\x00\x00\x00", 0))
    assert rec.opcode == (0x0F, 0x84)
    assert rec.displacement == 16


def test_classify_short_jmp_and_near_jmp():
    assert classify_cfc(decode_instruction(b"\xeb\x80", 0)).displacement == -128
    assert classify_cfc(decode_instruction(b"\xe9\xff\xff\xff\x7f", 0)).displacement == 2**31 - 1


def test_classify_is_pure_function_of_bytes():
    a = decode_instruction(b"\x74\x05", 0)
    b = decode_instruction(b"\x90\x74\x05", 1)
    assert classify_cfc(a).displacement == classify_cfc(b).displacement == 5
    assert classify_cfc(a).opcode == classify_cfc(b).opcode


def test_opcode_class_helpers():
    assert is_jcc((0x75,)) and is_jcc((0x0F, 0x84))
    assert not is_jcc((0xE8,)) and not is_jcc((0xEB,))
    assert is_rel8((0x75,)) and is_rel8((0xEB,))
    assert not is_rel8((0x0F, 0x84)) and not is_rel8((0xE8,))


@settings(max_examples=500, deadline=None)
@given(st.binary(min_size=1, max_size=200))
def test_tiling_invariant(data):
    result = decode_stream(_section(data))
    total = sum(i.length for i in result.instructions) + len(result.resyncs)
    assert total == len(data)
    pos = 0
    starts = {i.offset: i.length for i in result.instructions}
    while pos < len(data):
        if pos in starts:
            pos += starts[pos]
        else:
            assert pos in result.resyncs
            pos += 1


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=1, max_size=120))
def test_displacement_ranges(data):
    result = decode_stream(_section(data))
    for instr in result.instructions:
        if instr.cfc is None:
            continue
        if is_rel8(instr.cfc.opcode):
            assert -128 <= instr.cfc.displacement <= 127
        else:
            assert -(2**31) <= instr.cfc.displacement <= 2**31 - 1


def test_determinism():
    rng = random.Random(21)
    data = bytes(rng.randrange(256) for _ in range(3000))
    assert decode_stream(_section(data)) == decode_stream(_section(data))


@pytest.mark.parametrize("name", ["strings", "math32", "sorting"])
def test_differential_against_reference_decoder(name):
    """Start-offset agreement with the committed objdump linear sweep."""
    oracle = json.loads((FIXTURES / f"{name}.oracle.json").read_text())
    raw = (FIXTURES / f"{name}.exe").read_bytes()
    pe = parse_pe(raw, source=name)
    sec = next(s for s in executable_sections(pe) if s.name.rstrip(b"\x00") == b".text")
    assert len(sec.data) == oracle["text"]["size"]

    result = decode_stream(sec)
    ours = {i.offset for i in result.instructions} | set(result.resyncs)
    theirs = set(oracle["text"]["starts"])
    agree = sum(1 for b in range(len(sec.data)) if (b in ours) == (b in theirs))
    assert agree / len(sec.data) >= 0.99


def test_utf16_span_detection():
    text = "update".encode("utf-16-le")
    data = b"\x90" * 8 + text + b"\xCC" * 8
    assert utf16_spans(data) == [(8, 8 + len(text))]


def test_utf16_short_runs_ignored():
    data = b"a\x00b\x00" + b"\x90" * 8   # 2 pairs < threshold
    assert utf16_spans(data) == []
    assert utf16_spans(b"a\x00b\x00c\x00d\x00") == [(0, 8)]


def test_filter_flags_jnz_inside_unicode_text():
    # "update" in UTF-16LE embeds 75 00 ("u"), decoded as jnz+0
    code = b"\x8b\xff\x55"
    text = "update".encode("utf-16-le")
    data = code + text + b"\xCC" * 5
    instrs = list(decode_stream(_section(data)).instructions)
    kept, report = data_in_code_filter(instrs, data, policy="drop")
    assert report.spans == ((3, 15),)
    flagged_ops = {r.opcode for r in report.flagged}
    assert (0x75,) in flagged_ops
    assert all(i.cfc is None for i in kept if 3 <= i.offset < 15)


def test_filter_leaves_clean_code_alone():
    instrs = list(decode_stream(_section(PROLOGUE)).instructions)
    kept, report = data_in_code_filter(instrs, PROLOGUE)
    assert report.flagged == ()
    assert kept == instrs


def test_filter_flag_policy_keeps_records():
    data = b"\x75\x10" + "note".encode("utf-16-le") + b"\x90" * 4
    instrs = list(decode_stream(_section(data)).instructions)
    kept, report = data_in_code_filter(instrs, data, policy="flag")
    assert len(report.flagged) >= 1
    assert kept == instrs  # nothing dropped


def test_filter_scopes_to_text_span_only():
    # code with real jumps, then UTF-16 text, then padding and more code;
    # the int3 padding lets the sweep realign after the text desyncs it
    head = b"\x75\x06" + b"\x90" * 6          # jnz outside the text span
    text = "response".encode("utf-16-le")     # contains 72 00 et al.
    pad = b"\xCC" * 4
    tail = b"\xe8\x01\x00\x00\x00" + b"\x90" * 3
    data = head + text + pad + tail
    instrs = list(decode_stream(_section(data)).instructions)
    kept, report = data_in_code_filter(instrs, data, policy="drop")
    span = (len(head), len(head) + len(text))
    assert span in report.spans
    assert len(report.flagged) >= 1
    for rec in report.flagged:
        assert span[0] <= rec.address < span[1]
    survivors = {i.cfc.address for i in kept if i.cfc}
    assert 0 in survivors                          # head jnz kept
    assert len(head) + len(text) + len(pad) in survivors  # tail call kept
