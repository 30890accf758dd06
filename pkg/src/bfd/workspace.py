"""Workspace lifecycle: init, co, status, uadd, archive, deliver, dispose.

A workspace is a directory holding checked-out projects next to the files
``bfd init`` creates (build.xml, setup.sh, setup.csh and a ``tools`` link).
Book-keeping lives under ``.bfd/``:

    .bfd/workspace.rec     store:, tools:, then one ``project: <name> <base>`` per project
    .bfd/added/<project>   paths scheduled for addition by ``uadd``
"""

from __future__ import annotations

import hashlib
import logging
import os
import shlex
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import filelock

from . import archive
from .archive import ArchiveStore, Tag, format_tag, parse_tag
from .errors import (
    AlreadyCheckedOut,
    Declined,
    DirtyWorkspace,
    MissingTools,
    NotAWorkspace,
    NotCheckedOut,
    NotEmpty,
    NothingToArchive,
    NothingToDeliver,
    TagOverflow,
    UncleanProject,
    WorkspaceError,
)
from .fsutil import atomic_write
from .manifest import valid_project_name
from .xmlsubset import escape_attr

logger = logging.getLogger(__name__)

MARKER_DIR = ".bfd"
RECORD_NAME = "workspace.rec"
WORKSPACE_FILES = ("build.xml", "setup.csh", "setup.sh", "tools")
LIB_DIR = "lib"
FIRST_TAG = "V01-00-00"
BUMP_LEVELS = ("major", "minor", "patch")

# generated outputs that never count as project content
IGNORED_TOP_DIRS = {"build", "lib"}
IGNORED_ANY_DIRS = {MARKER_DIR}

DELIVER_PROMPT = 'Are you sure you want to deliver "{name}" with tag {tag}'
DELIVERED = '{tag} of "{name}" has been delivered.'
DISPOSE_ALL_PROMPT = "Are you sure you want to dispose of the entire workspace?"
NO_CHANGES = 'No files have been added to, or modified in, "{name}".'
NO_UNKNOWN = 'There are no unknown files in, "{name}".'
DISPOSED = 'Disposed of "{name}"'
DISPOSED_ALL = "Disposed of workspace files...anything left is your own problem."


@dataclass
class ChangeStatus:
    project: str
    added: list[str] = field(default_factory=list)
    modified: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    unknown: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.added or self.modified or self.missing or self.unknown)

    @property
    def has_changes(self) -> bool:
        return bool(self.added or self.modified or self.missing)

    def describe(self) -> str:
        lines = []
        for label, paths in (("A", self.added), ("M", self.modified),
                             ("!", self.missing), ("?", self.unknown)):
            lines += [f"{label} {p}" for p in paths]
        return "\n".join(lines)


@dataclass
class Workspace:
    root: Path
    store_path: Path
    tools_path: Path
    projects: dict[str, int | None] = field(default_factory=dict)
    lock_timeout: float = 10.0

    def __post_init__(self):
        self.root = Path(self.root)
        self.store_path = Path(self.store_path)
        self.tools_path = Path(self.tools_path)
        self._lock = None

    @property
    def marker(self) -> Path:
        return self.root / MARKER_DIR

    @property
    def store(self) -> ArchiveStore:
        return ArchiveStore(self.store_path, self.lock_timeout)

    @property
    def lib_dir(self) -> Path:
        return self.root / LIB_DIR

    def project_dir(self, project: str) -> Path:
        return self.root / project

    def require(self, project: str) -> None:
        if project not in self.projects:
            raise NotCheckedOut(project)

    @contextmanager
    def locked(self):
        # one FileLock object per Workspace so nested use is re-entrant
        if self._lock is None:
            self._lock = filelock.FileLock(str(self.marker / "lock"), timeout=self.lock_timeout)
        try:
            self._lock.acquire()
        except filelock.Timeout:
            raise WorkspaceError(f"workspace {self.root} is busy (lock held by another bfd)")
        try:
            yield self
        finally:
            self._lock.release()

    # persistence

    def save(self) -> None:
        lines = [f"store: {self.store_path}", f"tools: {self.tools_path}"]
        for name in sorted(self.projects):
            base = self.projects[name]
            lines.append(f"project: {name} {'none' if base is None else base}")
        atomic_write(self.marker / RECORD_NAME, "\n".join(lines) + "\n", fsync=False)
        write_workspace_buildfile(self)

    @classmethod
    def load(cls, root) -> "Workspace":
        root = Path(root)
        rec = root / MARKER_DIR / RECORD_NAME
        try:
            text = rec.read_text("utf-8")
        except FileNotFoundError:
            raise NotAWorkspace(root)
        store = tools = None
        projects: dict[str, int | None] = {}
        for line in text.splitlines():
            key, _, value = line.partition(": ")
            if key == "store":
                store = value
            elif key == "tools":
                tools = value
            elif key == "project":
                name, _, base = value.partition(" ")
                projects[name] = None if base == "none" else int(base)
        if store is None or tools is None:
            raise WorkspaceError(f"{rec} is incomplete")
        return cls(root, Path(store), Path(tools), projects)

    @classmethod
    def find(cls, start=None, env=None) -> "Workspace":
        """Locate the workspace from $WORKSPACE_ROOT or by walking up from ``start``."""
        env = os.environ if env is None else env
        if env.get("WORKSPACE_ROOT"):
            root = Path(env["WORKSPACE_ROOT"])
            if (root / MARKER_DIR / RECORD_NAME).is_file():
                return cls.load(root)
        here = Path(start or os.getcwd()).resolve()
        for candidate in (here, *here.parents):
            if (candidate / MARKER_DIR / RECORD_NAME).is_file():
                return cls.load(candidate)
        raise NotAWorkspace(here)

    # added-file index

    def _index_path(self, project: str) -> Path:
        return self.marker / "added" / project

    def added_paths(self, project: str) -> set[str]:
        try:
            text = self._index_path(project).read_text("utf-8")
        except FileNotFoundError:
            return set()
        return {line for line in text.split("\n") if line}

    def set_added(self, project: str, paths) -> None:
        path = self._index_path(project)
        paths = sorted(paths)
        if not paths:
            if path.exists():
                path.unlink()
            return
        atomic_write(path, "\n".join(paths) + "\n", fsync=False)


# generated workspace files

def render_setup_sh(root: Path, tools: Path) -> str:
    return (
        "# bfd workspace environment -- load with:  . setup.sh\n"
        f"WORKSPACE_ROOT={shlex.quote(str(root))}\n"
        "export WORKSPACE_ROOT\n"
        f"TOOLS_PATH={shlex.quote(str(tools))}\n"
        "export TOOLS_PATH\n"
        'PATH="$TOOLS_PATH/bin:$PATH"\n'
        "export PATH\n"
    )


def render_setup_csh(root: Path, tools: Path) -> str:
    return (
        "# bfd workspace environment -- load with:  source setup.csh\n"
        f"setenv WORKSPACE_ROOT {shlex.quote(str(root))}\n"
        f"setenv TOOLS_PATH {shlex.quote(str(tools))}\n"
        'setenv PATH "${TOOLS_PATH}/bin:${PATH}"\n'
        "rehash\n"
    )


def write_workspace_buildfile(ws: Workspace) -> None:
    lines = ["<workspace>"]
    lines += [f'  <project name="{escape_attr(p)}"/>' for p in sorted(ws.projects)]
    lines.append("</workspace>")
    atomic_write(ws.root / "build.xml", "\n".join(lines) + "\n", fsync=False)


def ws_init(dir, tools_path, store_path) -> Workspace:
    root = Path(dir).resolve()
    tools = Path(tools_path).resolve()
    if not root.is_dir():
        raise WorkspaceError(f"{root} is not a directory")
    if any(not name.startswith(".") for name in os.listdir(root)) or (root / MARKER_DIR).exists():
        raise NotEmpty(root)
    if not tools.is_dir():
        raise MissingTools(tools)

    archive.open_store(store_path)
    (root / MARKER_DIR).mkdir()
    ws = Workspace(root, Path(store_path).resolve(), tools)
    with ws.locked():
        ws.save()
        (root / "setup.sh").write_text(render_setup_sh(root, tools))
        (root / "setup.csh").write_text(render_setup_csh(root, tools))
        os.symlink(tools, root / "tools", target_is_directory=True)
    return ws


# status

def _is_ignored_name(name: str) -> bool:
    return name.endswith("~")


def scan_project(project_dir: Path) -> list[str]:
    """Relative paths of every non-ignored file under ``project_dir``."""
    found = []
    for dirpath, dirnames, filenames in os.walk(project_dir):
        here = Path(dirpath)
        top = here == project_dir
        dirnames[:] = sorted(
            d for d in dirnames
            if d not in IGNORED_ANY_DIRS and not (top and d in IGNORED_TOP_DIRS)
            and not _is_ignored_name(d)
        )
        for name in filenames:
            if _is_ignored_name(name):
                continue
            path = here / name
            if path.is_file():
                found.append(path.relative_to(project_dir).as_posix())
    return sorted(found)


def _file_digest(path: Path, algorithm: str) -> str:
    return hashlib.new(algorithm, path.read_bytes()).hexdigest()


def _base_snapshot(ws: Workspace, project: str):
    base = ws.projects.get(project)
    if base is None:
        return {}, archive.DIGEST_ALGORITHM
    rev = archive.read_revision(ws.store, project, base)
    return dict(rev.snapshot), rev.digest_algorithm


def ws_status(ws: Workspace, project: str) -> ChangeStatus:
    ws.require(project)
    pdir = ws.project_dir(project)
    base, algorithm = _base_snapshot(ws, project)
    added = ws.added_paths(project)
    on_disk = set(scan_project(pdir)) if pdir.is_dir() else set()

    status = ChangeStatus(project)
    for path in sorted(on_disk):
        if path in base:
            if _file_digest(pdir / path, algorithm) != base[path]:
                status.modified.append(path)
        elif path in added:
            status.added.append(path)
        else:
            status.unknown.append(path)
    status.missing = sorted((set(base) | added) - on_disk)
    return status


# operations

def ws_checkout(ws: Workspace, project: str, ref=archive.HEAD) -> ChangeStatus:
    if not valid_project_name(project):
        raise WorkspaceError(f"invalid project name {project!r}")
    with ws.locked():
        if project in ws.projects:
            raise AlreadyCheckedOut(project)
        pdir = ws.project_dir(project)
        if pdir.exists():
            raise WorkspaceError(f"{pdir} already exists but is not a checked-out project")
        if archive.project_exists(ws.store, project):
            seq = archive.resolve_ref(ws.store, project, ref)
            files = archive.archive_checkout(ws.store, project, seq)
            pdir.mkdir()
            for rel, data in files.items():
                target = pdir / rel
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
            ws.projects[project] = seq
            logger.info('checked out "%s" at revision %d (%d files)', project, seq, len(files))
        else:
            pdir.mkdir()
            ws.projects[project] = None
            logger.info('"%s" is not in the archive; created an empty project', project)
        ws.set_added(project, ())
        ws.save()
        return ws_status(ws, project)


def ws_uadd(ws: Workspace, project: str) -> ChangeStatus:
    with ws.locked():
        status = ws_status(ws, project)
        if status.unknown:
            present = set(scan_project(ws.project_dir(project)))
            tracked = (ws.added_paths(project) & present) | set(status.unknown)
            ws.set_added(project, tracked)
            status = ws_status(ws, project)
        return status


def ws_archive(ws: Workspace, project: str, message: str, allow_empty: bool = False):
    if not message or not message.strip():
        raise archive.EmptyMessage()
    with ws.locked():
        status = ws_status(ws, project)
        if not status.has_changes and not allow_empty:
            raise NothingToArchive(project)
        base, _ = _base_snapshot(ws, project)
        pdir = ws.project_dir(project)
        tracked = (set(base) | set(status.added)) - set(status.missing)
        files = {path: (pdir / path).read_bytes() for path in sorted(tracked)}
        rev = archive.archive_commit(ws.store, project, files, message)
        ws.projects[project] = rev.seq
        ws.set_added(project, ())
        ws.save()
        return rev


def next_tag(existing, bump: str = "patch") -> str:
    """Name of the next delivery tag after ``existing`` (Tag objects or names)."""
    if bump not in BUMP_LEVELS:
        raise ValueError(f"bump must be one of {BUMP_LEVELS}, not {bump!r}")
    versions = [parse_tag(t.name if isinstance(t, Tag) else t) for t in existing]
    if not versions:
        return FIRST_TAG
    major, minor, patch = max(versions)
    if bump == "major":
        major, minor, patch = major + 1, 0, 0
    elif bump == "minor":
        minor, patch = minor + 1, 0
    else:
        patch += 1
    if max(major, minor, patch) > 99:
        raise TagOverflow(f"cannot bump {format_tag(*max(versions))} at {bump} level: field exceeds 99")
    return format_tag(major, minor, patch)


Confirm = Callable[[str], bool]


def ws_deliver(ws: Workspace, project: str, bump: str = "patch", assume_yes: bool = False,
               force: bool = False, confirm: Confirm | None = None,
               out: Callable[[str], None] = print) -> Tag:
    with ws.locked():
        status = ws_status(ws, project)
        if not status.clean:
            raise DirtyWorkspace(status)
        base = ws.projects[project]
        if base is None:
            raise NothingToDeliver(f'"{project}" has never been archived')
        tags = archive.archive_tags(ws.store, project)
        already = [t.name for t in tags if t.seq == base]
        if already:
            raise NothingToDeliver(f'revision {base} of "{project}" was already delivered as {already[0]}')
        if not force:
            from .build import check_tests
            check_tests(ws, project)
        tag = next_tag(tags, bump)
        if not assume_yes:
            if confirm is None or not confirm(DELIVER_PROMPT.format(name=project, tag=tag)):
                raise Declined()
        result = archive.archive_tag(ws.store, project, base, tag)
        out(DELIVERED.format(tag=tag, name=project))
        return result


def _project_report(name: str) -> list[str]:
    return [NO_CHANGES.format(name=name), NO_UNKNOWN.format(name=name), DISPOSED.format(name=name)]


def _remove_project(ws: Workspace, project: str) -> None:
    shutil.rmtree(ws.project_dir(project))
    for bundle in (f"{project}.bundle", f"{project}-test.bundle"):
        (ws.lib_dir / bundle).unlink(missing_ok=True)
    del ws.projects[project]
    ws.set_added(project, ())


def ws_dispose(ws: Workspace, project: str | None = None, assume_yes: bool = False,
               confirm: Confirm | None = None, out: Callable[[str], None] = print) -> str:
    """Remove one project (or, with ``project=None``, the whole workspace).

    Nothing is removed unless every affected project is fully archived.
    """
    lines: list[str] = []
    with ws.locked():
        if project is not None:
            status = ws_status(ws, project)
            if not status.clean:
                raise UncleanProject(status)
            _remove_project(ws, project)
            ws.save()
            lines = _project_report(project)
        else:
            if not assume_yes:
                if confirm is None or not confirm(DISPOSE_ALL_PROMPT):
                    raise Declined()
            for name in sorted(ws.projects):
                status = ws_status(ws, name)
                if not status.clean:
                    raise UncleanProject(status)
            for name in sorted(ws.projects):
                _remove_project(ws, name)
                lines += _project_report(name)
            for name in WORKSPACE_FILES:
                path = ws.root / name
                if path.is_symlink() or path.is_file():
                    path.unlink()
            if ws.lib_dir.is_dir():
                shutil.rmtree(ws.lib_dir)
            shutil.rmtree(ws.marker)
            lines.append(DISPOSED_ALL)
    for line in lines:
        out(line)
    return "\n".join(lines) + "\n"
