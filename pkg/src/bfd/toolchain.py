"""Toolchains: how a project's sources are compiled and its tests run.

``sim`` is built in and needs nothing outside this package.  Other
toolchains are described by ``<tools>/toolchains/<id>.rec``::

    kind: external
    source_ext: .c
    package_doc: package.txt
    compile: make -C "$PROJECT_DIR"
    test: ./run-tests --xml "$REPORT_PATH"

External commands run through the shell in the project directory with
PROJECT, PROJECT_DIR, SRC_DIR, BUILD_DIR, CLASSES_DIR and REPORT_PATH set.
The test command must write an xUnit XML report to $REPORT_PATH.
"""

from __future__ import annotations

import hashlib
import os
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import xmlsubset
from .errors import BfdError, NotScaffolded, UnknownToolchain

SIM = "sim"
BUILDFILE = "build.xml"


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: int
    col: int
    message: str

    def __str__(self):
        return f"{self.file}:{self.line}:{self.col}: {self.message}"


@dataclass(frozen=True)
class Toolchain:
    id: str
    source_ext: str = ".sim"
    package_doc: str = "package.txt"
    kind: str = SIM
    compile_cmd: str = ""
    test_cmd: str = ""

    @property
    def external(self) -> bool:
        return self.kind == "external"


SIM_TOOLCHAIN = Toolchain(SIM)

_OPENERS = {"(": ")", "{": "}", "[": "]"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}


def _check_source(name: str, text: str) -> list[Diagnostic]:
    diags = []
    stack: list[tuple[str, int, int]] = []
    line, col = 1, 0
    in_string = None  # (line, col) where the open string started
    escaped = False
    for ch in text:
        if ch == "\n":
            if in_string:
                diags.append(Diagnostic(name, *in_string, "unterminated string literal"))
                in_string = None
            line, col = line + 1, 0
            escaped = False
            continue
        col += 1
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = None
            continue
        if ch == '"':
            in_string = (line, col)
        elif ch in _OPENERS:
            stack.append((ch, line, col))
        elif ch in _CLOSERS:
            if stack and stack[-1][0] == _CLOSERS[ch]:
                stack.pop()
            elif stack:
                opener, oline, ocol = stack[-1]
                diags.append(Diagnostic(
                    name, line, col,
                    f"'{ch}' does not match '{opener}' opened at {oline}:{ocol}"))
                stack.pop()
            else:
                diags.append(Diagnostic(name, line, col, f"unmatched '{ch}'"))
    if in_string:
        diags.append(Diagnostic(name, *in_string, "unterminated string literal"))
    for opener, oline, ocol in stack:
        diags.append(Diagnostic(name, oline, ocol, f"unclosed '{opener}'"))
    if not text.endswith("\n"):
        diags.append(Diagnostic(name, line, col + 1, "missing newline at end of file"))
    return diags


def sim_compile(sources: Mapping[str, bytes | str]) -> list[Diagnostic]:
    """Check that every source has balanced (), {}, [] outside string
    literals and ends with a newline.  An empty list means success."""
    diags = []
    for name in sorted(sources):
        data = sources[name]
        if isinstance(data, bytes):
            try:
                data = data.decode("utf-8")
            except UnicodeDecodeError as e:
                diags.append(Diagnostic(name, 1, e.start + 1, "source is not valid UTF-8"))
                continue
        diags += _check_source(name, data)
    return diags


def load_toolchain(toolchain_id: str, tools_path=None) -> Toolchain:
    rec = Path(tools_path) / "toolchains" / f"{toolchain_id}.rec" if tools_path else None
    if rec is None or not rec.is_file():
        if toolchain_id == SIM:
            return SIM_TOOLCHAIN
        raise UnknownToolchain(f"no toolchain {toolchain_id!r}" + (f" (looked for {rec})" if rec else ""))
    values = {}
    for line in rec.read_text("utf-8").splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise UnknownToolchain(f"{rec}: expected 'key: value', got {line!r}")
        values[key.strip()] = value.strip()
    kind = values.get("kind", "external" if "compile" in values else SIM)
    ext = values.get("source_ext", ".sim")
    if not ext.startswith("."):
        ext = "." + ext
    return Toolchain(
        id=toolchain_id,
        source_ext=ext,
        package_doc=values.get("package_doc", "package.txt"),
        kind=kind,
        compile_cmd=values.get("compile", ""),
        test_cmd=values.get("test", ""),
    )


def read_buildfile(project_dir) -> tuple[str, str]:
    """Return ``(project name, toolchain id)`` from a project's build.xml."""
    path = Path(project_dir) / BUILDFILE
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise NotScaffolded(f"{Path(project_dir).name} has no {BUILDFILE}; run 'bfd create project' first")
    root = xmlsubset.parse(data)
    if root.tag != "project" or "name" not in root.attrs:
        raise BfdError(f"{path}: root element must be <project name=... toolchain=...>")
    return root.attrs["name"], root.attrs.get("toolchain", SIM)


def run_external(command: str, cwd: Path, env: Mapping[str, str]) -> subprocess.CompletedProcess:
    full_env = dict(os.environ)
    full_env.update(env)
    return subprocess.run(command, shell=True, cwd=cwd, env=full_env,
                          stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)


# bundles

BUNDLE_MAGIC = b"BFDBUNDLE 1\n"
BUNDLE_EPOCH = 0


def write_bundle(entries: Mapping[str, bytes]) -> bytes:
    """Serialise ``entries`` deterministically: sorted paths, fixed epoch."""
    out = [BUNDLE_MAGIC, f"epoch: {BUNDLE_EPOCH}\n".encode()]
    for path in sorted(entries):
        data = bytes(entries[path])
        digest = hashlib.sha256(data).hexdigest()
        out.append(f"entry: {path} {len(data)} {digest}\n".encode("utf-8"))
        out.append(data)
        out.append(b"\n")
    return b"".join(out)


def read_bundle(blob: bytes) -> dict[str, bytes]:
    if not blob.startswith(BUNDLE_MAGIC):
        raise BfdError("not a bfd bundle")
    pos = len(BUNDLE_MAGIC)
    entries = {}
    while pos < len(blob):
        end = blob.index(b"\n", pos)
        header = blob[pos:end].decode("utf-8")
        pos = end + 1
        if header.startswith("epoch: "):
            continue
        if not header.startswith("entry: "):
            raise BfdError(f"bad bundle header {header!r}")
        rest, length, digest = header[len("entry: "):].rsplit(" ", 2)
        data = blob[pos:pos + int(length)]
        if hashlib.sha256(data).hexdigest() != digest:
            raise BfdError(f"bundle entry {rest} is corrupt")
        entries[rest] = data
        pos += int(length) + 1
    return entries
