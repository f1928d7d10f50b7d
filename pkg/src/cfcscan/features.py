"""Per-file CFC feature structure, displacement n-grams and frequency bands.

A FeatureSet maps each CFC opcode to its ordered (address, displacement)
events, keyed the way the collector saw them.  Addresses are the section
RVA plus the instruction offset, so events from different sections never
collide and section membership stays recoverable from the metadata.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .disasm import CfcRecord, is_jcc, is_rel8
from .errors import MismatchedNError, NoCfcFoundError

DEFAULT_NGRAM_SIZES = (2, 4, 6)
DEFAULT_BAND = (10, 50)

Opcode = tuple[int, ...]
Event = tuple[int, int]             # (address, displacement)
NGram = tuple[int, ...]
NGramHistogram = Counter           # Counter[NGram]


@dataclass(frozen=True)
class SectionMeta:
    name: bytes
    rva: int
    entropy: float
    line_count: int                 # decoded instruction count


@dataclass(frozen=True)
class SectionRecords:
    """Decoded CFC events of one section, input to build_feature_set."""

    name: bytes
    rva: int
    entropy: float
    line_count: int
    records: tuple[CfcRecord, ...]


@dataclass(frozen=True)
class FeatureSet:
    sample_id: str
    per_opcode: dict[Opcode, tuple[Event, ...]]
    section_meta: tuple[SectionMeta, ...]

    def frequency(self, opcode: Opcode) -> int:
        return len(self.per_opcode.get(opcode, ()))

    @property
    def event_count(self) -> int:
        return sum(len(ev) for ev in self.per_opcode.values())


def _selected(opcode: Opcode, selector) -> bool:
    if isinstance(selector, tuple):
        return opcode == selector
    if selector == "jcc":
        return is_jcc(opcode)
    if selector == "all":
        return True
    if selector == "rel8":
        return is_rel8(opcode)
    if selector == "call":
        return opcode == (0xE8,)
    raise ValueError(f"unknown selector {selector!r}")


def build_feature_set(sample_id: str, sections: Iterable[SectionRecords]) -> FeatureSet:
    """Aggregate per-section CFC records into the per-opcode event map.

    Event addresses become rva + section-relative address.  Raises
    NoCfcFoundError when the sample has zero events overall.
    """
    per_opcode: dict[Opcode, list[Event]] = {}
    meta = []
    for sec in sections:
        meta.append(SectionMeta(
            name=sec.name, rva=sec.rva, entropy=sec.entropy, line_count=sec.line_count,
        ))
        for rec in sorted(sec.records, key=lambda r: r.address):
            per_opcode.setdefault(rec.opcode, []).append(
                (sec.rva + rec.address, rec.displacement)
            )
    if not any(per_opcode.values()):
        raise NoCfcFoundError(f"{sample_id}: no control-flow-change events")
    return FeatureSet(
        sample_id=sample_id,
        per_opcode={op: tuple(ev) for op, ev in per_opcode.items()},
        section_meta=tuple(meta),
    )


def displacement_sequence(fs: FeatureSet, selector="jcc") -> list[int]:
    """Address-ordered displacements of the selected opcode class."""
    events = []
    for opcode, evs in fs.per_opcode.items():
        if _selected(opcode, selector):
            events.extend(evs)
    events.sort(key=lambda e: e[0])
    return [disp for _, disp in events]


def section_sequences(fs: FeatureSet, selector="jcc") -> list[list[int]]:
    """Displacement sequences split per section; n-grams never straddle a
    section boundary."""
    bounds = sorted((m.rva for m in fs.section_meta), reverse=True)

    def section_of(address: int) -> int:
        for rva in bounds:
            if address >= rva:
                return rva
        return 0

    by_section: dict[int, list[Event]] = {}
    for opcode, evs in fs.per_opcode.items():
        if _selected(opcode, selector):
            for ev in evs:
                by_section.setdefault(section_of(ev[0]), []).append(ev)
    out = []
    for rva in sorted(by_section):
        events = sorted(by_section[rva], key=lambda e: e[0])
        out.append([disp for _, disp in events])
    return out


def ngrams(seq: Sequence, n: int) -> list[tuple]:
    """Sliding window of width n, step 1; empty when the sequence is short."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def sample_ngrams(fs: FeatureSet, n: int, selector="jcc") -> list[NGram]:
    grams: list[NGram] = []
    for seq in section_sequences(fs, selector):
        grams.extend(ngrams(seq, n))
    return grams


def histogram(grams: Iterable[tuple]) -> NGramHistogram:
    return Counter(grams)


def frequency_band(hist: NGramHistogram, lo: int = DEFAULT_BAND[0], hi: int = DEFAULT_BAND[1]) -> NGramHistogram:
    """Entries whose occurrence count lies in [lo, hi], bounds inclusive."""
    if not 1 <= lo <= hi:
        raise ValueError("band requires 1 <= lo <= hi")
    return Counter({g: c for g, c in hist.items() if lo <= c <= hi})


def _histogram_n(hist: NGramHistogram) -> int | None:
    lengths = {len(g) for g in hist}
    if len(lengths) > 1:
        raise MismatchedNError(f"histogram mixes n-gram lengths {sorted(lengths)}")
    return lengths.pop() if lengths else None


def exclusivity_report(good: NGramHistogram, bad: NGramHistogram) -> tuple[int, int, int]:
    """(exclusive to good, exclusive to bad, shared) over histogram keys."""
    n_good = _histogram_n(good)
    n_bad = _histogram_n(bad)
    if n_good is not None and n_bad is not None and n_good != n_bad:
        raise MismatchedNError(f"{n_good}-grams vs {n_bad}-grams")
    good_keys = set(good)
    bad_keys = set(bad)
    shared = good_keys & bad_keys
    return len(good_keys - shared), len(bad_keys - shared), len(shared)
