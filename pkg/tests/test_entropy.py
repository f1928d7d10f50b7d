import inspect
import math
import random

import pytest

from cfcscan.entropy import block_entropies, gate, shannon_entropy
from cfcscan.errors import EmptyInputError
from cfcscan.pe import ExecutableSection

PROLOGUE = bytes.fromhex("8bff558bec81ec1c020000a10030000133c5")


def _section(data: bytes) -> ExecutableSection:
    return ExecutableSection(name=b".text", rva=0x1000, data=data)


def test_constant_bytes_zero_entropy():
    assert abs(shannon_entropy(b"\x00" * 4096)) < 1e-12


def test_all_byte_values_max_entropy():
    assert abs(shannon_entropy(bytes(range(256))) - 8.0) < 1e-12


def test_two_equiprobable_symbols():
    assert abs(shannon_entropy(b"\x41" * 100 + b"\x42" * 100) - 1.0) < 1e-12


def test_empty_input_raises():
    with pytest.raises(EmptyInputError):
        shannon_entropy(b"")
    with pytest.raises(EmptyInputError):
        block_entropies(b"")


def test_permutation_invariance():
    rng = random.Random(7)
    data = bytes(rng.randrange(256) for _ in range(2000))
    shuffled = bytearray(data)
    rng.shuffle(shuffled)
    assert shannon_entropy(data) == pytest.approx(shannon_entropy(bytes(shuffled)), abs=1e-12)


def test_entropy_range_over_random_inputs():
    rng = random.Random(11)
    for _ in range(50):
        data = bytes(rng.randrange(256) for _ in range(rng.randrange(1, 600)))
        assert 0.0 <= shannon_entropy(data) <= 8.0
        for e in block_entropies(data, 64):
            assert 0.0 <= e <= 8.0


def test_block_entropies_uniform_zero_blocks():
    assert block_entropies(b"\x00" * 512, 256) == [0.0, 0.0]


def test_block_entropies_mixed_blocks():
    data = bytes(range(256)) + b"\x00" * 256
    assert block_entropies(data, 256) == [8.0, 0.0]


def test_trailing_block_shorter_than_half_is_dropped():
    # 300 = 256 + 44; 44 < 128, so only the full block is measured
    data = bytes(range(256)) + b"\xAA" * 44
    assert block_entropies(data, 256) == [8.0]


def test_trailing_block_at_least_half_is_measured():
    data = b"\x00" * 256 + bytes(range(128))
    result = block_entropies(data, 256)
    assert len(result) == 2
    assert result[0] == 0.0
    assert result[1] == pytest.approx(7.0, abs=1e-12)  # 128 distinct bytes


def test_all_data_shorter_than_half_block_yields_nothing():
    assert block_entropies(b"\x90" * 100, 256) == []


def test_gate_defaults_are_the_published_thresholds():
    params = inspect.signature(gate).parameters
    assert params["avg_threshold"].default == 6.677
    assert params["block_threshold"].default == 7.199


def test_gate_flags_uniform_random_as_packed():
    rng = random.Random(1234)
    data = bytes(rng.randrange(256) for _ in range(8192))
    report = gate(_section(data))
    assert report.verdict == "packed"
    assert report.average_entropy > 6.677


def test_gate_passes_plain_code():
    report = gate(_section(PROLOGUE * 100))
    assert report.verdict == "pass"
    assert report.average_entropy < 6.677


def test_gate_block_test_catches_embedded_high_entropy():
    # near-uniform "encrypted" blob: permutations keep every 256-byte
    # window's histogram flat regardless of block alignment
    rng = random.Random(99)
    blob = b""
    for _ in range(8):
        perm = list(range(256))
        rng.shuffle(perm)
        blob += bytes(perm)
    data = PROLOGUE * 200 + blob + PROLOGUE * 200
    report = gate(_section(data))
    assert report.average_entropy <= 6.677
    assert report.max_block_entropy > 7.199
    assert report.verdict == "packed"


def test_gate_verdict_matches_invariant():
    rng = random.Random(5)
    for _ in range(30):
        data = bytes(rng.randrange(rng.choice([4, 16, 256])) for _ in range(rng.randrange(16, 2048)))
        report = gate(_section(data))
        expected = report.average_entropy > 6.677 or report.max_block_entropy > 7.199
        assert (report.verdict == "packed") == expected


def test_gate_short_section_judged_on_average():
    report = gate(_section(b"\x90" * 60))
    assert report.max_block_entropy == report.average_entropy
    assert report.verdict == "pass"


def test_determinism():
    data = PROLOGUE * 50
    assert gate(_section(data)) == gate(_section(data))


def test_entropy_matches_direct_formula():
    rng = random.Random(3)
    data = bytes(rng.randrange(8) for _ in range(1000))
    counts = [data.count(bytes([b])) for b in range(256)]
    expected = -sum(c / len(data) * math.log2(c / len(data)) for c in counts if c)
    assert shannon_entropy(data) == pytest.approx(expected, abs=1e-12)
