"""Persistence of feature sets, n-gram corpora, models and manifests, and
the importer for externally produced disassembly listings.

Everything is stored in versioned, line-oriented, tab-separated UTF-8 text
(documented in docs/formats.md) so non-Python tooling can consume it.  Each
file ends in a sha256 trailer over all preceding bytes; loading verifies the
digest before parsing, so a single flipped byte is always caught.  N-gram
histograms additionally support a compact length-prefixed binary layout for
large corpora.
"""

from __future__ import annotations

import hashlib
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .bayes import BAD, GOOD, BayesModel, TokenMode
from .errors import (
    DuplicateSampleError,
    EmptyImportError,
    FormatVersionMismatchError,
    HashMismatchError,
    MixedLabelsError,
    StoreError,
)
from .features import FeatureSet, SectionMeta, sample_ngrams, histogram
from .pe import ExecutableSection

FORMAT_VERSION = 1
_MAGIC = "#cfcscan"
_BINARY_MAGIC = b"CFCH"


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def make_sample_id(name: str, content: bytes) -> str:
    """Sample identifier: file name plus full content digest."""
    return f"{name}@{content_digest(content)}"


def _check_field(value: str, what: str) -> str:
    if "\t" in value or "\n" in value or "\r" in value:
        raise ValueError(f"{what} must not contain tabs or newlines: {value!r}")
    return value


def _finish(body: str, path: Path) -> str:
    """Append the digest trailer and write; returns the file digest."""
    payload = body.encode("utf-8")
    digest = content_digest(payload)
    path.write_bytes(payload + f"#sha256\t{digest}\n".encode("utf-8"))
    return content_digest(path.read_bytes())


_TRAILER = re.compile(rb"#sha256\t([0-9a-f]{64})\n")


def _read_verified(path: Path, expected_type: str) -> list[str]:
    """Read, verify trailer digest and version header, return record lines."""
    raw = Path(path).read_bytes()
    idx = raw.rfind(b"#sha256\t")
    if idx < 0:
        raise HashMismatchError(f"{path}: digest trailer missing")
    body, trailer = raw[:idx], raw[idx:]
    m = _TRAILER.fullmatch(trailer)
    if m is None:
        raise HashMismatchError(f"{path}: malformed digest trailer")
    if content_digest(body) != m.group(1).decode():
        raise HashMismatchError(f"{path}: content digest mismatch")
    lines = body.decode("utf-8").splitlines()
    if not lines:
        raise StoreError(f"{path}: empty file")
    head = lines[0].split("\t")
    if len(head) != 3 or head[0] != _MAGIC:
        raise StoreError(f"{path}: not a cfcscan file")
    if head[1] != expected_type:
        raise StoreError(f"{path}: expected {expected_type}, found {head[1]}")
    if int(head[2]) != FORMAT_VERSION:
        raise FormatVersionMismatchError(f"{path}: format version {head[2]}")
    return lines[1:]


# -- feature sets ----------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    file_hash: str        # digest of the stored feature file
    path: str
    entropy_verdict: str  # "pass" | "packed"
    cfc_count: int
    source: str           # "native-scan" | "listing-import"


@dataclass(frozen=True)
class CorpusManifest:
    corpus_label: str     # "goodware" | "malware" | "test"
    entries: tuple[ManifestEntry, ...]
    format_version: int = FORMAT_VERSION


def save_feature_set(
    fs: FeatureSet,
    path: Path,
    entropy_verdict: str = "pass",
    source: str = "native-scan",
) -> ManifestEntry:
    path = Path(path)
    lines = [
        f"{_MAGIC}\tfeature-set\t{FORMAT_VERSION}",
        f"#sample\t{_check_field(fs.sample_id, 'sample_id')}",
        f"#sections\t{len(fs.section_meta)}",
    ]
    for m in fs.section_meta:
        lines.append(f"S\t{m.name.hex()}\t{m.rva}\t{m.entropy!r}\t{m.line_count}")
    lines.append(f"#events\t{fs.event_count}")
    for opcode in sorted(fs.per_opcode):
        op_hex = "".join(f"{b:02x}" for b in opcode)
        for address, disp in fs.per_opcode[opcode]:
            lines.append(f"E\t{op_hex}\t{address}\t{disp}")
    file_hash = _finish("\n".join(lines) + "\n", path)
    return ManifestEntry(
        sample_id=fs.sample_id,
        file_hash=file_hash,
        path=str(path),
        entropy_verdict=entropy_verdict,
        cfc_count=fs.event_count,
        source=source,
    )


def load_feature_set(path: Path) -> FeatureSet:
    lines = _read_verified(Path(path), "feature-set")
    sample_id = ""
    meta: list[SectionMeta] = []
    per_opcode: dict[tuple[int, ...], list[tuple[int, int]]] = {}
    for line in lines:
        parts = line.split("\t")
        if parts[0] == "#sample":
            sample_id = parts[1]
        elif parts[0] == "S":
            meta.append(SectionMeta(
                name=bytes.fromhex(parts[1]),
                rva=int(parts[2]),
                entropy=float(parts[3]),
                line_count=int(parts[4]),
            ))
        elif parts[0] == "E":
            op = bytes.fromhex(parts[1])
            per_opcode.setdefault(tuple(op), []).append((int(parts[2]), int(parts[3])))
    return FeatureSet(
        sample_id=sample_id,
        per_opcode={op: tuple(ev) for op, ev in per_opcode.items()},
        section_meta=tuple(meta),
    )


# -- n-gram histograms -----------------------------------------------------

@dataclass(frozen=True)
class StoredHistogram:
    counts: Counter
    n: int
    label: str


def save_histogram(counts: Counter, n: int, label: str, path: Path, binary: bool = False) -> str:
    path = Path(path)
    if binary:
        return _save_histogram_binary(counts, n, label, path)
    lines = [
        f"{_MAGIC}\tngram-histogram\t{FORMAT_VERSION}",
        f"#label\t{_check_field(label, 'label')}",
        f"#n\t{n}",
        f"#entries\t{len(counts)}",
    ]
    for gram in sorted(counts):
        lines.append(f"G\t{','.join(str(v) for v in gram)}\t{counts[gram]}")
    return _finish("\n".join(lines) + "\n", path)


def _save_histogram_binary(counts: Counter, n: int, label: str, path: Path) -> str:
    label_bytes = label.encode("utf-8")
    out = bytearray()
    out += _BINARY_MAGIC
    out += struct.pack("<HIH", FORMAT_VERSION, n, len(label_bytes))
    out += label_bytes
    out += struct.pack("<Q", len(counts))
    for gram in sorted(counts):
        out += struct.pack(f"<{n}q", *gram)
        out += struct.pack("<Q", counts[gram])
    out += hashlib.sha256(bytes(out)).digest()
    path.write_bytes(bytes(out))
    return content_digest(path.read_bytes())


def load_histogram(path: Path) -> StoredHistogram:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _BINARY_MAGIC:
        return _load_histogram_binary(path, raw)
    lines = _read_verified(path, "ngram-histogram")
    label = ""
    n = 0
    counts: Counter = Counter()
    for line in lines:
        parts = line.split("\t")
        if parts[0] == "#label":
            label = parts[1]
        elif parts[0] == "#n":
            n = int(parts[1])
        elif parts[0] == "G":
            gram = tuple(int(v) for v in parts[1].split(","))
            counts[gram] = int(parts[2])
    return StoredHistogram(counts=counts, n=n, label=label)


def _load_histogram_binary(path: Path, raw: bytes) -> StoredHistogram:
    if len(raw) < 4 + 8 + 32:
        raise HashMismatchError(f"{path}: binary histogram too short")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise HashMismatchError(f"{path}: content digest mismatch")
    version, n, label_len = struct.unpack_from("<HIH", body, 4)
    if version != FORMAT_VERSION:
        raise FormatVersionMismatchError(f"{path}: format version {version}")
    pos = 4 + 8
    label = body[pos:pos + label_len].decode("utf-8")
    pos += label_len
    (entry_count,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    counts: Counter = Counter()
    for _ in range(entry_count):
        gram = struct.unpack_from(f"<{n}q", body, pos)
        pos += 8 * n
        (count,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        counts[gram] = count
    return StoredHistogram(counts=counts, n=n, label=label)


# -- Bayes models ----------------------------------------------------------

def _token_text(token) -> str:
    if isinstance(token, tuple):
        return ",".join(str(v) for v in token)
    return str(token)


def _token_parse(text: str, mode: TokenMode):
    if mode.kind == "ngram":
        return tuple(int(v) for v in text.split(","))
    return int(text)


def save_model(model: BayesModel, path: Path) -> str:
    path = Path(path)
    mode = model.mode
    lines = [
        f"{_MAGIC}\tbayes-model\t{FORMAT_VERSION}",
        f"#mode\t{mode.kind}",
        f"#n\t{mode.n if mode.n is not None else '-'}",
        f"#band\t{mode.lo if mode.lo is not None else '-'}\t{mode.hi if mode.hi is not None else '-'}",
        f"#alpha\t{model.smoothing_alpha!r}",
        f"#priors\t{model.class_priors[GOOD]!r}\t{model.class_priors[BAD]!r}",
        f"#vocab\t{model.vocab_size}",
    ]
    for label in (GOOD, BAD):
        for token in sorted(model.token_counts[label]):
            lines.append(f"T\t{label}\t{_token_text(token)}\t{model.token_counts[label][token]}")
    return _finish("\n".join(lines) + "\n", path)


def load_model(path: Path) -> BayesModel:
    lines = _read_verified(Path(path), "bayes-model")
    kind = "raw"
    n = None
    lo = hi = None
    alpha = 1.0
    priors = {GOOD: 0.5, BAD: 0.5}
    vocab_size = 0
    raw_tokens: list[tuple[str, str, int]] = []
    for line in lines:
        parts = line.split("\t")
        if parts[0] == "#mode":
            kind = parts[1]
        elif parts[0] == "#n":
            n = None if parts[1] == "-" else int(parts[1])
        elif parts[0] == "#band":
            lo = None if parts[1] == "-" else int(parts[1])
            hi = None if parts[2] == "-" else int(parts[2])
        elif parts[0] == "#alpha":
            alpha = float(parts[1])
        elif parts[0] == "#priors":
            priors = {GOOD: float(parts[1]), BAD: float(parts[2])}
        elif parts[0] == "#vocab":
            vocab_size = int(parts[1])
        elif parts[0] == "T":
            raw_tokens.append((parts[1], parts[2], int(parts[3])))
    mode = TokenMode(kind=kind, n=n, lo=lo, hi=hi)
    counts = {GOOD: Counter(), BAD: Counter()}
    for label, text, count in raw_tokens:
        counts[label][_token_parse(text, mode)] = count
    return BayesModel(
        mode=mode,
        smoothing_alpha=alpha,
        class_priors=priors,
        token_counts=counts,
        class_totals={label: sum(c.values()) for label, c in counts.items()},
        vocab_size=vocab_size,
    )


# -- corpus manifests ------------------------------------------------------

def save_manifest(manifest: CorpusManifest, path: Path) -> str:
    path = Path(path)
    lines = [
        f"{_MAGIC}\tcorpus-manifest\t{FORMAT_VERSION}",
        f"#label\t{_check_field(manifest.corpus_label, 'label')}",
        f"#entries\t{len(manifest.entries)}",
    ]
    for e in manifest.entries:
        _check_field(e.sample_id, "sample_id")
        _check_field(e.path, "path")
        lines.append(
            f"M\t{e.sample_id}\t{e.file_hash}\t{e.path}\t{e.entropy_verdict}"
            f"\t{e.cfc_count}\t{e.source}"
        )
    return _finish("\n".join(lines) + "\n", path)


def load_manifest(path: Path) -> CorpusManifest:
    lines = _read_verified(Path(path), "corpus-manifest")
    label = ""
    entries = []
    for line in lines:
        parts = line.split("\t")
        if parts[0] == "#label":
            label = parts[1]
        elif parts[0] == "M":
            entries.append(ManifestEntry(
                sample_id=parts[1],
                file_hash=parts[2],
                path=parts[3],
                entropy_verdict=parts[4],
                cfc_count=int(parts[5]),
                source=parts[6],
            ))
    return CorpusManifest(corpus_label=label, entries=tuple(entries))


def merge_corpus(manifests: Sequence[CorpusManifest]) -> CorpusManifest:
    """Combine manifests of one label; duplicate sample ids are rejected
    and entries come out sorted, so merge order cannot matter."""
    if not manifests:
        raise StoreError("nothing to merge")
    labels = {m.corpus_label for m in manifests}
    if len(labels) > 1:
        raise MixedLabelsError(f"cannot merge labels {sorted(labels)}")
    seen: dict[str, ManifestEntry] = {}
    for m in manifests:
        for e in m.entries:
            if e.sample_id in seen:
                raise DuplicateSampleError(e.sample_id)
            seen[e.sample_id] = e
    entries = tuple(sorted(seen.values(), key=lambda e: e.sample_id))
    return CorpusManifest(corpus_label=labels.pop(), entries=entries)


def manifest_feature_sets(manifest: CorpusManifest, root: Path = Path(".")) -> list[FeatureSet]:
    """Load every member feature set, verifying each file digest against
    the manifest entry."""
    out = []
    for e in manifest.entries:
        path = Path(e.path)
        if not path.is_absolute():
            path = Path(root) / path
        if content_digest(path.read_bytes()) != e.file_hash:
            raise HashMismatchError(f"{path}: does not match manifest entry {e.sample_id}")
        out.append(load_feature_set(path))
    return out


def corpus_ngram_db(
    manifest: CorpusManifest,
    n: int,
    root: Path = Path("."),
    selector="jcc",
) -> Counter:
    """Corpus-level n-gram histogram: count-sum over member samples."""
    total: Counter = Counter()
    for fs in manifest_feature_sets(manifest, root):
        total.update(histogram(sample_ngrams(fs, n, selector)))
    return total


# -- disassembly listing import --------------------------------------------

_LISTING_PREFIX = re.compile(r"^\s*([^\s:]+):([0-9A-Fa-f]+)\s+(\S.*)$")
_HEX_BYTE = re.compile(r"^[0-9A-F]{2}$")


@dataclass(frozen=True)
class ListingImage:
    """Reassembled byte image of one section out of a listing document."""

    section: str
    base: int                          # lowest absolute address seen
    data: bytes
    gaps: tuple[tuple[int, int], ...]  # uncovered [start, end) offsets
    byte_lines: int                    # lines that contributed bytes


@dataclass(frozen=True)
class ListingImport:
    images: tuple[ListingImage, ...]
    skipped_lines: int                              # declaration/label lines
    errors: tuple[tuple[int, str], ...]             # (line number, reason)


def import_listing(text: str) -> ListingImport:
    """Rebuild per-section byte images from an opcode listing.

    Expected line shape: `SECTION:ADDRESS  HEXBYTES  MNEMONIC...` with the
    hex column in uppercase pairs.  Lines with the address prefix but no
    hex column (labels, declarations) are skipped; lines without the prefix
    are reported as errors and the import continues.  Only the hex bytes
    are trusted, never the mnemonic text.
    """
    runs: dict[str, list[tuple[int, bytes]]] = {}
    skipped = 0
    errors: list[tuple[int, str]] = []
    byte_lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        m = _LISTING_PREFIX.match(line)
        if not m:
            errors.append((lineno, "no SECTION:ADDRESS prefix"))
            continue
        section, addr_text, rest = m.groups()
        chunk = bytearray()
        for token in rest.split():
            if _HEX_BYTE.match(token):
                chunk.append(int(token, 16))
            else:
                break
        if not chunk:
            skipped += 1
            continue
        runs.setdefault(section, []).append((int(addr_text, 16), bytes(chunk)))
        byte_lines[section] = byte_lines.get(section, 0) + 1

    if not runs:
        raise EmptyImportError("no byte-bearing lines in listing")

    images = []
    for section, section_runs in runs.items():
        section_runs.sort(key=lambda r: r[0])
        base = section_runs[0][0]
        end = max(addr + len(data) for addr, data in section_runs)
        image = bytearray(end - base)
        covered = bytearray(end - base)
        for addr, data in section_runs:
            off = addr - base
            image[off:off + len(data)] = data
            covered[off:off + len(data)] = b"\x01" * len(data)
        gaps = []
        pos = 0
        while pos < len(covered):
            if not covered[pos]:
                start = pos
                while pos < len(covered) and not covered[pos]:
                    pos += 1
                gaps.append((start, pos))
            else:
                pos += 1
        images.append(ListingImage(
            section=section,
            base=base,
            data=bytes(image),
            gaps=tuple(gaps),
            byte_lines=byte_lines[section],
        ))
    return ListingImport(images=tuple(images), skipped_lines=skipped, errors=tuple(errors))


def listing_sections(imp: ListingImport, source: str = "", rebase: int = 0) -> list[ExecutableSection]:
    """Imported images as sections ready for decoding; `rebase` is
    subtracted from each base address (e.g. the module's image base) so
    listing addresses line up with a native scan of the same file."""
    return [
        ExecutableSection(
            name=img.section.encode("utf-8"),
            rva=img.base - rebase,
            data=img.data,
            source_file=source,
        )
        for img in imp.images
    ]
