#!/usr/bin/env python3
"""Build the committed binary fixtures and their reference-oracle files.

Compiles the C sources under tools/fixture_src/ into minimal IA-32 PE
executables (clang + lld-link, no CRT), then records GNU objdump's view of
each binary: the section table and the linear-sweep instruction start
offsets of .text.  Tests compare the package's own parser and decoder
against these committed files, so the oracle runs here once, not at test
time.

Usage: python tools/make_fixtures.py
"""

from __future__ import annotations

import hashlib
import json
import re
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SRC = ROOT / "tools" / "fixture_src"
OUT = ROOT / "tests" / "fixtures"

PROGRAMS = [
    ("strings", "-O1"),
    ("math32", "-O2"),
    ("sorting", "-Os"),
]


def run(cmd: list[str]) -> str:
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"command failed: {' '.join(cmd)}\n{proc.stderr}")
    return proc.stdout


def build_pe(name: str, opt: str, workdir: Path) -> Path:
    src_name = name if name != "math32" else "math32"
    obj = workdir / f"{name}.obj"
    exe = OUT / f"{name}.exe"
    run([
        "clang", "--target=i686-pc-windows-msvc", opt, "-fno-builtin",
        "-c", str(SRC / f"{src_name}.c"), "-o", str(obj),
    ])
    run([
        "lld-link", "/entry:mainCRTStartup", "/subsystem:console",
        "/nodefaultlib", f"/out:{exe}", str(obj),
    ])
    return exe


def objdump_sections(exe: Path) -> list[dict]:
    text = run(["objdump", "-h", str(exe)])
    sections = []
    for line in text.splitlines():
        m = re.match(r"^\s*\d+\s+(\S+)\s+([0-9a-f]{8})\s+([0-9a-f]{8})\s+[0-9a-f]{8}\s+([0-9a-f]{8})", line)
        if m:
            sections.append({
                "name": m.group(1),
                "virtual_size": int(m.group(2), 16),
                "vma": int(m.group(3), 16),
                "file_off": int(m.group(4), 16),
            })
    return sections


def objdump_starts(raw_code: Path) -> list[int]:
    """Instruction start offsets from objdump's linear sweep over raw bytes.

    Continuation lines (no mnemonic column) are not starts; "(bad)" lines
    are counted as decode attempts, matching the 1-byte resync policy.
    """
    text = run(["objdump", "-D", "-b", "binary", "-m", "i386", str(raw_code)])
    starts = []
    for line in text.splitlines():
        parts = line.split("\t")
        if len(parts) >= 3 and parts[2].strip() and parts[0].strip().endswith(":"):
            starts.append(int(parts[0].strip()[:-1], 16))
    return starts


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    workdir = ROOT / "build" / "fixtures"
    workdir.mkdir(parents=True, exist_ok=True)
    objdump_version = run(["objdump", "--version"]).splitlines()[0]
    clang_version = run(["clang", "--version"]).splitlines()[0]

    for name, opt in PROGRAMS:
        exe = build_pe(name, opt, workdir)
        data = exe.read_bytes()
        sections = objdump_sections(exe)
        text_sec = next(s for s in sections if s["name"] == ".text")

        code = data[text_sec["file_off"]:text_sec["file_off"] + text_sec["virtual_size"]]
        raw_path = workdir / f"{name}.text.bin"
        raw_path.write_bytes(code)
        starts = objdump_starts(raw_path)

        oracle = {
            "file": exe.name,
            "generator": "tools/make_fixtures.py",
            "objdump": objdump_version,
            "clang": clang_version,
            "opt": opt,
            "file_sha256": hashlib.sha256(data).hexdigest(),
            "sections": sections,
            "text": {
                "file_off": text_sec["file_off"],
                "size": len(code),
                "sha256": hashlib.sha256(code).hexdigest(),
                "starts": starts,
            },
        }
        oracle_path = OUT / f"{name}.oracle.json"
        oracle_path.write_text(json.dumps(oracle, indent=1) + "\n")
        print(f"{exe.name}: .text {len(code)} bytes, {len(starts)} oracle starts")


if __name__ == "__main__":
    main()
