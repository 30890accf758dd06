"""Directory-backed revision archive.

Layout under the store root::

    blobs/<digest>                          file contents, addressed by digest
    projects/<name>/revisions/<seq>.rec     one immutable record per commit
    projects/<name>/tags/<tag>              tag -> seq binding
    lock                                    advisory writer lock

Records and tags are written to a temporary name and renamed into place,
so readers never observe a half-written revision.
"""

from __future__ import annotations

import base64
import hashlib
import os
import re
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

import filelock

from .errors import (
    CorruptBlob,
    DuplicateTag,
    EmptyMessage,
    InvalidPath,
    LockTimeout,
    MalformedTag,
    UnknownProject,
    UnknownRef,
    UnknownSeq,
)
from .fsutil import atomic_write

DIGEST_ALGORITHM = "sha256"
DEFAULT_LOCK_TIMEOUT = 10.0
HEAD = "HEAD"

PROJECT_NAME_RE = re.compile(r"[a-z][a-z0-9-]*\Z")
TAG_RE = re.compile(r"V([0-9]{2})-([0-9]{2})-([0-9]{2})\Z")
_B64_PREFIX = "b64:"


def digest_bytes(data: bytes, algorithm: str = DIGEST_ALGORITHM) -> str:
    return hashlib.new(algorithm, data).hexdigest()


def parse_tag(name: str) -> tuple[int, int, int]:
    m = TAG_RE.match(name) if isinstance(name, str) else None
    if not m:
        raise MalformedTag(name)
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def format_tag(major: int, minor: int, patch: int) -> str:
    for v in (major, minor, patch):
        if not 0 <= v <= 99:
            raise MalformedTag(f"V{major}-{minor}-{patch}")
    return f"V{major:02d}-{minor:02d}-{patch:02d}"


def validate_path(path: str) -> str:
    if not isinstance(path, str) or not path:
        raise InvalidPath(path)
    if path.startswith("/") or "\\" in path:
        raise InvalidPath(path)
    if any(ord(c) < 0x20 or c == "\x7f" for c in path):
        raise InvalidPath(path)
    for seg in path.split("/"):
        if seg in ("", ".", ".."):
            raise InvalidPath(path)
    return path


def validate_project_name(project: str) -> str:
    if not isinstance(project, str) or not PROJECT_NAME_RE.match(project):
        raise UnknownProject(project)
    return project


@dataclass(frozen=True)
class Tag:
    name: str
    project: str
    seq: int

    @property
    def version(self) -> tuple[int, int, int]:
        return parse_tag(self.name)


@dataclass(frozen=True)
class Revision:
    project: str
    seq: int
    message: str
    timestamp: datetime
    snapshot: Mapping[str, str]
    digest_algorithm: str = DIGEST_ALGORITHM
    record_digest: str = ""


@dataclass(frozen=True)
class RevisionInfo:
    """History entry: revision metadata plus any tags pointing at it."""

    seq: int
    message: str
    timestamp: datetime
    tags: tuple[str, ...] = ()


@dataclass
class ArchiveStore:
    root: Path
    lock_timeout: float = DEFAULT_LOCK_TIMEOUT

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def lockfile(self) -> Path:
        return self.root / "lock"

    @property
    def blob_dir(self) -> Path:
        return self.root / "blobs"

    def project_dir(self, project: str) -> Path:
        return self.root / "projects" / project

    def revision_path(self, project: str, seq: int) -> Path:
        return self.project_dir(project) / "revisions" / f"{seq}.rec"

    def tag_path(self, project: str, name: str) -> Path:
        return self.project_dir(project) / "tags" / name

    def exists(self) -> bool:
        return (self.root / "projects").is_dir() and self.blob_dir.is_dir()

    def ensure(self) -> "ArchiveStore":
        (self.root / "projects").mkdir(parents=True, exist_ok=True)
        self.blob_dir.mkdir(exist_ok=True)
        return self

    @contextmanager
    def locked(self):
        self.ensure()
        lock = filelock.FileLock(str(self.lockfile), timeout=self.lock_timeout)
        try:
            lock.acquire()
        except filelock.Timeout:
            raise LockTimeout(f"could not lock archive {self.root} within {self.lock_timeout}s")
        try:
            yield
        finally:
            lock.release()


def open_store(root, lock_timeout: float = DEFAULT_LOCK_TIMEOUT) -> ArchiveStore:
    return ArchiveStore(Path(root), lock_timeout).ensure()


def _format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def _parse_timestamp(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def _encode_message(message: str) -> str:
    if "\n" in message or "\r" in message or message.startswith(_B64_PREFIX):
        return _B64_PREFIX + base64.b64encode(message.encode("utf-8")).decode("ascii")
    return message


def _decode_message(text: str) -> str:
    if text.startswith(_B64_PREFIX):
        return base64.b64decode(text[len(_B64_PREFIX):]).decode("utf-8")
    return text


def render_record(seq: int, message: str, timestamp: datetime, snapshot: Mapping[str, str],
                  algorithm: str = DIGEST_ALGORITHM) -> bytes:
    lines = [
        f"seq: {seq}",
        f"message: {_encode_message(message)}",
        f"timestamp: {_format_timestamp(timestamp)}",
        f"digest: {algorithm}",
    ]
    # sorted by path: the record digest depends on this ordering
    for path in sorted(snapshot):
        lines.append(f"file: {path} {snapshot[path]}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_record(project: str, data: bytes) -> Revision:
    seq = None
    message = ""
    timestamp = None
    algorithm = DIGEST_ALGORITHM
    snapshot: dict[str, str] = {}
    for line in data.decode("utf-8").split("\n"):
        if not line:
            continue
        key, _, value = line.partition(": ")
        if key == "seq":
            seq = int(value)
        elif key == "message":
            message = _decode_message(value)
        elif key == "timestamp":
            timestamp = _parse_timestamp(value)
        elif key == "digest":
            algorithm = value
        elif key == "file":
            path, _, digest = value.rpartition(" ")
            snapshot[path] = digest
    if seq is None or timestamp is None:
        raise ValueError(f"truncated revision record for {project}")
    return Revision(project, seq, message, timestamp, snapshot, algorithm,
                    digest_bytes(data, algorithm))


def _revision_seqs(store: ArchiveStore, project: str) -> list[int]:
    rev_dir = store.project_dir(project) / "revisions"
    try:
        names = os.listdir(rev_dir)
    except FileNotFoundError:
        return []
    seqs = []
    for name in names:
        stem, dot, ext = name.partition(".")
        if ext == "rec" and stem.isdigit():
            seqs.append(int(stem))
    return sorted(seqs)


def _store_blob(store: ArchiveStore, data: bytes, algorithm: str = DIGEST_ALGORITHM) -> str:
    digest = digest_bytes(data, algorithm)
    path = store.blob_dir / digest
    if not path.exists():
        atomic_write(path, data)
    return digest


def _read_blob(store: ArchiveStore, digest: str, algorithm: str) -> bytes:
    try:
        data = (store.blob_dir / digest).read_bytes()
    except FileNotFoundError:
        raise CorruptBlob(digest)
    if digest_bytes(data, algorithm) != digest:
        raise CorruptBlob(digest)
    return data


def archive_commit(store: ArchiveStore, project: str, files: Mapping[str, bytes], message: str,
                   timestamp: datetime | None = None) -> Revision:
    """Record ``files`` as the next revision of ``project``."""
    validate_project_name(project)
    if not message or not message.strip():
        raise EmptyMessage()
    for path in files:
        validate_path(path)
    timestamp = timestamp or datetime.now(timezone.utc)

    with store.locked():
        snapshot = {path: _store_blob(store, bytes(data)) for path, data in files.items()}
        seqs = _revision_seqs(store, project)
        seq = (seqs[-1] if seqs else 0) + 1
        record = render_record(seq, message, timestamp, snapshot)
        target = store.revision_path(project, seq)
        if target.exists():  # pragma: no cover - guarded by the lock
            raise RuntimeError(f"revision {seq} of {project} already exists")
        (store.project_dir(project) / "tags").mkdir(parents=True, exist_ok=True)
        atomic_write(target, record)
    return parse_record(project, record)


def read_revision(store: ArchiveStore, project: str, seq: int) -> Revision:
    path = store.revision_path(project, seq)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        if not project_exists(store, project):
            raise UnknownProject(project)
        raise UnknownSeq(project, seq)
    return parse_record(project, data)


def project_exists(store: ArchiveStore, project: str) -> bool:
    return bool(PROJECT_NAME_RE.match(project or "")) and bool(_revision_seqs(store, project))


def archive_projects(store: ArchiveStore) -> list[str]:
    try:
        names = os.listdir(store.root / "projects")
    except FileNotFoundError:
        return []
    return sorted(n for n in names if project_exists(store, n))


def _read_tag(store: ArchiveStore, project: str, name: str) -> Tag | None:
    try:
        text = store.tag_path(project, name).read_text("utf-8")
    except FileNotFoundError:
        return None
    for line in text.splitlines():
        key, _, value = line.partition(": ")
        if key == "seq":
            return Tag(name, project, int(value))
    return None


def archive_tags(store: ArchiveStore, project: str) -> list[Tag]:
    tag_dir = store.project_dir(project) / "tags"
    try:
        names = os.listdir(tag_dir)
    except FileNotFoundError:
        return []
    tags = []
    for name in names:
        if TAG_RE.match(name):
            tag = _read_tag(store, project, name)
            if tag is not None:
                tags.append(tag)
    return sorted(tags, key=lambda t: t.version)


def resolve_ref(store: ArchiveStore, project: str, ref=HEAD) -> int:
    seqs = _revision_seqs(store, project)
    if not seqs:
        raise UnknownProject(project)
    if ref == HEAD or ref is None:
        return seqs[-1]
    if isinstance(ref, int) or (isinstance(ref, str) and ref.isdigit()):
        seq = int(ref)
        if seq not in seqs:
            raise UnknownSeq(project, ref)
        return seq
    if isinstance(ref, str) and TAG_RE.match(ref):
        tag = _read_tag(store, project, ref)
        if tag is not None:
            return tag.seq
    raise UnknownRef(project, ref)


def archive_checkout(store: ArchiveStore, project: str, ref=HEAD) -> dict[str, bytes]:
    """Return the files of ``project`` at ``ref`` (HEAD, a seq, or a tag name)."""
    seq = resolve_ref(store, project, ref)
    rev = read_revision(store, project, seq)
    return {path: _read_blob(store, digest, rev.digest_algorithm)
            for path, digest in rev.snapshot.items()}


def archive_tag(store: ArchiveStore, project: str, seq: int, name: str) -> Tag:
    parse_tag(name)
    with store.locked():
        if not project_exists(store, project):
            raise UnknownProject(project)
        if not store.revision_path(project, seq).exists():
            raise UnknownSeq(project, seq)
        if store.tag_path(project, name).exists():
            raise DuplicateTag(project, name)
        body = f"seq: {seq}\ncreated: {_format_timestamp(datetime.now(timezone.utc))}\n"
        atomic_write(store.tag_path(project, name), body.encode("utf-8"))
    return Tag(name, project, seq)


def archive_history(store: ArchiveStore, project: str) -> list[RevisionInfo]:
    seqs = _revision_seqs(store, project)
    if not seqs:
        raise UnknownProject(project)
    by_seq: dict[int, list[str]] = {}
    for tag in archive_tags(store, project):
        by_seq.setdefault(tag.seq, []).append(tag.name)
    history = []
    for seq in seqs:
        rev = read_revision(store, project, seq)
        history.append(RevisionInfo(seq, rev.message, rev.timestamp, tuple(by_seq.get(seq, ()))))
    return history


def archive_latest(store: ArchiveStore, project: str) -> RevisionInfo | None:
    seqs = _revision_seqs(store, project)
    if not seqs:
        return None
    rev = read_revision(store, project, seqs[-1])
    tags = tuple(t.name for t in archive_tags(store, project) if t.seq == rev.seq)
    return RevisionInfo(rev.seq, rev.message, rev.timestamp, tags)
