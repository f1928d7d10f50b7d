import random
from collections import Counter

import pytest

from cfcscan.bayes import TokenMode, train
from cfcscan.disasm import CfcRecord, decode_stream
from cfcscan.errors import (
    DuplicateSampleError,
    EmptyImportError,
    FormatVersionMismatchError,
    HashMismatchError,
    MixedLabelsError,
)
from cfcscan.features import SectionRecords, build_feature_set, histogram, sample_ngrams
from cfcscan.pe import ExecutableSection, executable_sections, parse_pe
from cfcscan.store import (
    CorpusManifest,
    ManifestEntry,
    content_digest,
    corpus_ngram_db,
    import_listing,
    listing_sections,
    load_feature_set,
    load_histogram,
    load_manifest,
    load_model,
    make_sample_id,
    manifest_feature_sets,
    merge_corpus,
    save_feature_set,
    save_histogram,
    save_manifest,
    save_model,
)

from conftest import FIXTURES


def random_feature_set(rng: random.Random, sample_id="s") -> "FeatureSet":
    sections = []
    for s in range(rng.randrange(1, 4)):
        records = tuple(
            CfcRecord(
                opcode=rng.choice([(0x74,), (0x75,), (0xE8,), (0x0F, 0x84), (0xEB,)]),
                address=4 * i,
                displacement=rng.randrange(-(2**31), 2**31),
            )
            for i in range(rng.randrange(1, 20))
        )
        sections.append(SectionRecords(
            name=bytes([0x2E, 65 + s, 0, 0, 0, 0, 0, 0]),
            rva=0x1000 * (s + 1),
            entropy=rng.random() * 8,
            line_count=rng.randrange(1, 500),
            records=records,
        ))
    return build_feature_set(sample_id, sections)


# -- round trips -------------------------------------------------------------

def test_feature_set_roundtrip(tmp_path):
    rng = random.Random(1)
    for i in range(20):
        fs = random_feature_set(rng, f"sample{i}")
        path = tmp_path / f"fs{i}.cfcf"
        entry = save_feature_set(fs, path)
        assert load_feature_set(path) == fs
        assert entry.cfc_count == fs.event_count
        assert entry.file_hash == content_digest(path.read_bytes())


def test_histogram_roundtrip_text_and_binary(tmp_path):
    rng = random.Random(2)
    for binary in (False, True):
        counts = Counter({
            tuple(rng.randrange(-300, 300) for _ in range(2)): rng.randrange(1, 99)
            for _ in range(50)
        })
        path = tmp_path / f"h{binary}.cfch"
        save_histogram(counts, 2, "goodware", path, binary=binary)
        stored = load_histogram(path)
        assert stored.counts == counts
        assert stored.n == 2
        assert stored.label == "goodware"


def test_model_roundtrip(tmp_path):
    rng = random.Random(3)
    for mode in (TokenMode.raw(), TokenMode.ngram(2), TokenMode.frequency(2, 10, 50)):
        def toks():
            if mode.kind == "ngram":
                return Counter({(rng.randrange(50), rng.randrange(50)): rng.randrange(1, 9)
                                for _ in range(8)})
            return Counter({rng.randrange(-100, 100): rng.randrange(1, 9) for _ in range(8)})
        model = train([toks() for _ in range(5)], [toks() for _ in range(3)],
                      alpha=0.5, mode=mode)
        path = tmp_path / f"{mode.kind}.cfcb"
        save_model(model, path)
        assert load_model(path) == model


def test_manifest_roundtrip(tmp_path):
    entries = tuple(
        ManifestEntry(
            sample_id=f"s{i}@{'ab' * 32}",
            file_hash="cd" * 32,
            path=f"s{i}.cfcf",
            entropy_verdict="pass",
            cfc_count=i * 3 + 1,
            source="native-scan",
        )
        for i in range(5)
    )
    manifest = CorpusManifest(corpus_label="malware", entries=entries)
    path = tmp_path / "m.cfcm"
    save_manifest(manifest, path)
    assert load_manifest(path) == manifest


# -- corruption and versioning -------------------------------------------------

def test_single_byte_corruption_detected(tmp_path):
    rng = random.Random(4)
    fs = random_feature_set(rng)
    path = tmp_path / "fs.cfcf"
    save_feature_set(fs, path)
    original = path.read_bytes()
    for _ in range(80):
        pos = rng.randrange(len(original))
        flip = bytes([original[pos] ^ (1 << rng.randrange(8))])
        path.write_bytes(original[:pos] + flip + original[pos + 1:])
        with pytest.raises((HashMismatchError, ValueError)):
            load_feature_set(path)


def test_version_bump_rejected_without_partial_load(tmp_path):
    rng = random.Random(5)
    fs = random_feature_set(rng)
    path = tmp_path / "fs.cfcf"
    save_feature_set(fs, path)
    raw = path.read_bytes()
    idx = raw.rfind(b"#sha256\t")
    body = raw[:idx].replace(b"feature-set\t1", b"feature-set\t2", 1)
    path.write_bytes(body + f"#sha256\t{content_digest(body)}\n".encode())
    with pytest.raises(FormatVersionMismatchError):
        load_feature_set(path)


def test_wrong_type_rejected(tmp_path):
    save_histogram(Counter({(1, 2): 3}), 2, "test", tmp_path / "h.cfch")
    with pytest.raises(Exception):
        load_feature_set(tmp_path / "h.cfch")


# -- manifests -------------------------------------------------------------------

def test_merge_is_commutative(tmp_path):
    def manifest(ids):
        return CorpusManifest(corpus_label="goodware", entries=tuple(
            ManifestEntry(i, "0" * 64, f"{i}.cfcf", "pass", 1, "native-scan") for i in ids
        ))
    a = manifest(["x", "m"])
    b = manifest(["b", "z"])
    assert merge_corpus([a, b]) == merge_corpus([b, a])


def test_merge_rejects_duplicates_and_mixed_labels():
    e = ManifestEntry("dup", "0" * 64, "d.cfcf", "pass", 1, "native-scan")
    a = CorpusManifest(corpus_label="goodware", entries=(e,))
    with pytest.raises(DuplicateSampleError):
        merge_corpus([a, a])
    b = CorpusManifest(corpus_label="malware", entries=())
    with pytest.raises(MixedLabelsError):
        merge_corpus([a, b])


def test_manifest_hash_verification(tmp_path):
    rng = random.Random(6)
    fs = random_feature_set(rng, "v1")
    entry = save_feature_set(fs, tmp_path / "v1.cfcf")
    manifest = CorpusManifest(corpus_label="test", entries=(
        ManifestEntry(entry.sample_id, entry.file_hash, "v1.cfcf",
                      "pass", entry.cfc_count, "native-scan"),
    ))
    assert manifest_feature_sets(manifest, tmp_path) == [fs]
    # feature file replaced behind the manifest's back
    save_feature_set(random_feature_set(rng, "v2"), tmp_path / "v1.cfcf")
    with pytest.raises(HashMismatchError):
        manifest_feature_sets(manifest, tmp_path)


def test_corpus_ngram_db_matches_recount(tmp_path):
    rng = random.Random(7)
    entries = []
    expected = Counter()
    for i in range(3):
        fs = random_feature_set(rng, f"c{i}")
        entry = save_feature_set(fs, tmp_path / f"c{i}.cfcf")
        entries.append(ManifestEntry(entry.sample_id, entry.file_hash, f"c{i}.cfcf",
                                     "pass", entry.cfc_count, "native-scan"))
        expected.update(histogram(sample_ngrams(fs, 2)))
    manifest = CorpusManifest(corpus_label="test", entries=tuple(entries))
    assert corpus_ngram_db(manifest, 2, root=tmp_path) == expected
    single = CorpusManifest(corpus_label="test", entries=(entries[0],))
    fs0 = load_feature_set(tmp_path / "c0.cfcf")
    assert corpus_ngram_db(single, 2, root=tmp_path) == histogram(sample_ngrams(fs0, 2))


# -- listing import ----------------------------------------------------------------

def test_listing_fixture_line_accounting():
    text = (FIXTURES / "prologue_listing.lst").read_text()
    imp = import_listing(text)
    assert imp.skipped_lines == 5          # declaration lines
    assert len(imp.images) == 1
    img = imp.images[0]
    assert img.byte_lines == 13            # instruction lines with hex bytes
    assert img.section == ".text"
    assert img.base == 0x01001316
    assert img.gaps == ()
    expected = bytes.fromhex(
        "8bff558bec81ec1c020000a10030000133c58945fc8b4508"
        "53568b75105733 0b".replace(" ", "")
    )
    assert img.data == expected
    assert imp.errors == ()


def test_listing_single_line():
    imp = import_listing(".text:01001318          55          push  ebp\n")
    img = imp.images[0]
    assert img.base == 0x01001318
    assert img.data == b"\x55"


def test_listing_unparsable_line_reported_and_continues():
    text = (
        "garbage without prefix\n"
        ".text:00000000 90 nop\n"
        "???: no address here\n"
        ".text:00000001 C3 retn\n"
    )
    imp = import_listing(text)
    assert [lineno for lineno, _ in imp.errors] == [1, 3]
    assert imp.images[0].data == b"\x90\xc3"


def test_listing_gap_detection():
    text = (
        ".text:00000000 90 nop\n"
        ".text:00000008 C3 retn\n"
    )
    img = import_listing(text).images[0]
    assert img.data == b"\x90" + b"\x00" * 7 + b"\xc3"
    assert img.gaps == ((1, 8),)


def test_listing_lowercase_mnemonics_not_mistaken_for_bytes():
    # "db" is hex-shaped but lowercase; the byte column is uppercase
    imp = import_listing(".text:00000000 90 db 90h\n")
    assert imp.images[0].data == b"\x90"


def test_empty_import():
    with pytest.raises(EmptyImportError):
        import_listing(".text:01001316  var_4 = dword ptr -4\n")


def test_listing_multiple_sections():
    text = (
        ".text:00401000 90 nop\n"
        "seg01:00500000 CC int3\n"
        ".text:00401001 C3 retn\n"
    )
    imp = import_listing(text)
    by_name = {img.section: img for img in imp.images}
    assert by_name[".text"].data == b"\x90\xc3"
    assert by_name["seg01"].data == b"\xcc"


def test_import_path_equivalence_with_native_scan():
    """The same code bytes, scanned natively and rebuilt from a listing,
    give identical features."""
    raw = (FIXTURES / "math32.exe").read_bytes()
    pe = parse_pe(raw, source="math32.exe")
    native_secs = executable_sections(pe)

    def to_feature_set(secs):
        parts = []
        for sec in secs:
            result = decode_stream(sec)
            records = tuple(i.cfc for i in result.instructions if i.cfc)
            parts.append(SectionRecords(
                name=sec.name.rstrip(b"\x00"), rva=sec.rva, entropy=1.0,
                line_count=len(result.instructions), records=records,
            ))
        return build_feature_set("same-id", parts)

    # emit a dump-style listing: 8 bytes per line at rva-based addresses
    lines = []
    for sec in native_secs:
        name = sec.name.rstrip(b"\x00").decode()
        for off in range(0, len(sec.data), 8):
            chunk = sec.data[off:off + 8]
            hexcol = " ".join(f"{b:02X}" for b in chunk)
            lines.append(f"{name}:{sec.rva + off:08X} {hexcol} db ...")
    imp = import_listing("\n".join(lines) + "\n")
    imported_secs = listing_sections(imp, source="math32.exe")

    native_fs = to_feature_set(
        [ExecutableSection(name=s.name.rstrip(b"\x00"), rva=s.rva, data=s.data)
         for s in native_secs]
    )
    imported_fs = to_feature_set(imported_secs)
    assert imported_fs == native_fs


def test_sample_id_uses_content_digest():
    sid = make_sample_id("a.exe", b"payload")
    name, digest = sid.split("@")
    assert name == "a.exe"
    assert digest == content_digest(b"payload")
    assert len(digest) == 64
