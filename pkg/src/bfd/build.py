"""Per-project build targets, the workspace call-down build and deployment tarballs.

Target graph (a target runs its prerequisites first, once per invocation)::

    lib -> compile      test -> lib      report -> test
    docs -> apidocs, report             clean, compile, apidocs: none
"""

from __future__ import annotations

import gzip
import io
import logging
import os
import re
import shutil
import tarfile
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path

from . import testreport
from .errors import BfdError, BuildError, CompileFailed, MissingBundles, TestsFailed, UnknownTarget
from .fsutil import atomic_write
from .manifest import MANIFEST_NAME, load_manifest, resolve_build_order
from .toolchain import (
    Diagnostic,
    Toolchain,
    load_toolchain,
    read_buildfile,
    run_external,
    sim_compile,
    write_bundle,
    read_bundle,
)

logger = logging.getLogger(__name__)

PREREQUISITES = {
    "clean": (),
    "compile": (),
    "lib": ("compile",),
    "test": ("lib",),
    "report": ("test",),
    "apidocs": (),
    "docs": ("apidocs", "report"),
}
TARGETS = tuple(PREREQUISITES)
DEFAULT_TARGET = "lib"
TEST_SEGMENT = "test"


@dataclass
class BuildResult:
    project: str
    target: str
    success: bool
    duration: float
    log: str
    artifacts: list[Path] = field(default_factory=list)
    error: BfdError | None = None


def bundle_names(project: str) -> tuple[str, str]:
    return f"{project}.bundle", f"{project}-test.bundle"


def format_total_time(seconds: float) -> str:
    n = int(round(seconds))
    return f"Total time: {n} second{'' if n == 1 else 's'}"


def _walk_files(root: Path) -> dict[str, Path]:
    found = {}
    if not root.is_dir():
        return found
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in filenames:
            path = Path(dirpath) / name
            found[path.relative_to(root).as_posix()] = path
    return found


def _is_test_path(rel: str) -> bool:
    return TEST_SEGMENT in rel.split("/")[:-1]


class _Context:
    """Everything one project's targets need during a single invocation."""

    def __init__(self, ws, project: str, toolchain: Toolchain):
        self.ws = ws
        self.project = project
        self.toolchain = toolchain
        self.dir = ws.project_dir(project)
        self.build_dir = self.dir / "build"
        self.classes_dir = self.build_dir / "classes"
        self.reports_dir = self.build_dir / "test-reports"
        self.docs_dir = self.build_dir / "docs"
        self.lines: list[str] = []
        self.artifacts: list[Path] = []

    def task(self, name: str, message: str) -> None:
        for line in message.rstrip("\n").split("\n"):
            self.lines.append(f"    [{name}] {line}".rstrip())

    def env(self) -> dict[str, str]:
        return {
            "PROJECT": self.project,
            "PROJECT_DIR": str(self.dir),
            "SRC_DIR": str(self.dir / "src"),
            "BUILD_DIR": str(self.build_dir),
            "CLASSES_DIR": str(self.classes_dir),
            "REPORT_PATH": str(self.reports_dir / f"{self.project}.xml"),
        }


class Build:
    """One build invocation; memoizes targets across every project it touches."""

    def __init__(self, ws, toolchain: str | None = None):
        self.ws = ws
        self.toolchain_override = toolchain
        self._done: dict[tuple[str, str], BfdError | None] = {}
        self._lock = threading.Lock()

    def _context(self, project: str) -> _Context:
        self.ws.require(project)
        pdir = self.ws.project_dir(project)
        name, toolchain_id = read_buildfile(pdir)
        if name != project:
            raise BuildError(f'{pdir}/build.xml names project "{name}", expected "{project}"')
        if not (pdir / MANIFEST_NAME).is_file():
            raise BuildError(f'"{project}" has no {MANIFEST_NAME}')
        manifest = load_manifest(pdir / MANIFEST_NAME)
        if manifest.name != project:
            raise BuildError(f'{pdir}/{MANIFEST_NAME} names project "{manifest.name}", expected "{project}"')
        return _Context(self.ws, project, load_toolchain(self.toolchain_override or toolchain_id,
                                                          self.ws.tools_path))

    def run_target(self, project: str, target: str = DEFAULT_TARGET) -> BuildResult:
        if target not in PREREQUISITES:
            raise UnknownTarget(target)
        t0 = time.monotonic()
        ctx = None
        error = None
        try:
            ctx = self._context(project)
            self._execute(ctx, target)
        except BfdError as e:
            error = e
        duration = time.monotonic() - t0
        lines = ["Buildfile: build.xml"] + (ctx.lines if ctx else [])
        lines.append("")
        if error is None:
            lines.append("BUILD SUCCESSFUL")
        else:
            lines += ["BUILD FAILED", str(error), ""]
        lines.append(format_total_time(duration))
        return BuildResult(project, target, error is None, duration, "\n".join(lines) + "\n",
                           list(ctx.artifacts) if ctx else [], error)

    def _execute(self, ctx: _Context, target: str) -> None:
        key = (ctx.project, target)
        with self._lock:
            if key in self._done:
                if self._done[key] is not None:
                    raise self._done[key]
                return
        for prereq in PREREQUISITES[target]:
            self._execute(ctx, prereq)
        ctx.lines += ["", f"{target}:"]
        try:
            getattr(self, "_target_" + target)(ctx)
        except BfdError as e:
            with self._lock:
                self._done[key] = e
            raise
        with self._lock:
            self._done[key] = None

    # targets

    def _target_clean(self, ctx: _Context) -> None:
        if ctx.build_dir.exists():
            shutil.rmtree(ctx.build_dir)
            ctx.task("delete", f"Deleting directory {ctx.build_dir}")
        for name in bundle_names(ctx.project):
            path = ctx.ws.lib_dir / name
            if path.exists():
                path.unlink()
                ctx.task("delete", f"Deleting {path}")

    def _target_compile(self, ctx: _Context) -> None:
        tc = ctx.toolchain
        src = _walk_files(ctx.dir / "src")
        if ctx.classes_dir.exists():
            shutil.rmtree(ctx.classes_dir)
        ctx.classes_dir.mkdir(parents=True)
        if tc.external:
            proc = run_external(tc.compile_cmd, ctx.dir, ctx.env())
            if proc.stdout:
                ctx.task("exec", proc.stdout)
            if proc.returncode != 0:
                raise CompileFailed([Diagnostic(ctx.project, 0, 0, line)
                                     for line in proc.stdout.splitlines()] or
                                    [Diagnostic(ctx.project, 0, 0, f"exit status {proc.returncode}")])
            ctx.task("compile", f"Compiled with {tc.id}")
            return
        sources = {rel: path.read_bytes() for rel, path in src.items() if rel.endswith(tc.source_ext)}
        diagnostics = sim_compile(sources)
        if diagnostics:
            ctx.task("compile", "\n".join(str(d) for d in diagnostics))
            raise CompileFailed(diagnostics)
        for rel, path in src.items():
            target = ctx.classes_dir / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(path, target)
        ctx.task("compile", f"Compiling {len(sources)} source file{'s' if len(sources) != 1 else ''} "
                            f"to {ctx.classes_dir}")

    def _target_lib(self, ctx: _Context) -> None:
        classes = {rel: path.read_bytes() for rel, path in _walk_files(ctx.classes_dir).items()}
        resources = {rel: path.read_bytes() for rel, path in _walk_files(ctx.dir / "resources").items()}
        main = {f"classes/{rel}": data for rel, data in classes.items() if not _is_test_path(rel)}
        main.update({f"resources/{rel}": data for rel, data in resources.items()
                     if not rel.startswith("test/")})
        test = {f"classes/{rel}": data for rel, data in classes.items()}
        test.update({f"resources/{rel}": data for rel, data in resources.items()})
        ctx.ws.lib_dir.mkdir(exist_ok=True)
        for name, entries in zip(bundle_names(ctx.project), (main, test)):
            path = ctx.ws.lib_dir / name
            atomic_write(path, write_bundle(entries), fsync=False)
            ctx.artifacts.append(path)
            ctx.task("bundle", f"Building bundle: {path}")

    def _target_test(self, ctx: _Context) -> None:
        tc = ctx.toolchain
        ctx.reports_dir.mkdir(parents=True, exist_ok=True)
        if tc.external:
            report_path = ctx.reports_dir / f"{ctx.project}.xml"
            if report_path.exists():
                report_path.unlink()
            proc = run_external(tc.test_cmd, ctx.dir, ctx.env())
            if proc.stdout:
                ctx.task("exec", proc.stdout)
            if not report_path.is_file():
                raise BuildError(f"test command for {ctx.project} wrote no report to {report_path}")
            report = testreport.read_xml_report(report_path)
        else:
            bundle = read_bundle((ctx.ws.lib_dir / bundle_names(ctx.project)[1]).read_bytes())
            files = {path[len("classes/"):]: data for path, data in bundle.items()
                     if path.startswith("classes/")}
            report = testreport.run_sim_tests(files, ctx.project, tc.source_ext)
            report_path = testreport.write_xml_report(report, ctx.reports_dir)
        ctx.artifacts.append(report_path)
        ctx.task("test", testreport.console_summary(report))
        if not report.ok:
            raise TestsFailed(report)

    def _target_report(self, ctx: _Context) -> None:
        xmls = sorted(ctx.reports_dir.glob("*.xml"))
        index = testreport.render_html_report(xmls, ctx.reports_dir / "html")
        ctx.artifacts.append(index)
        ctx.task("report", f"Test report written to {index}")

    def _target_apidocs(self, ctx: _Context) -> None:
        ext = ctx.toolchain.source_ext
        api_dir = ctx.docs_dir / "api"
        if api_dir.exists():
            shutil.rmtree(api_dir)
        api_dir.mkdir(parents=True)
        entries = []
        for rel, path in _walk_files(ctx.dir / "src").items():
            if not rel.endswith(ext) or _is_test_path(rel):
                continue
            blocks = extract_doc_comments(path.read_text("utf-8", "replace"))
            name = rel[: -len(ext)].replace("/", ".")
            atomic_write(api_dir / f"{name}.txt", f"{name}\n{'=' * len(name)}\n\n" + "\n\n".join(blocks) + "\n",
                         fsync=False)
            entries.append(name)
        index = api_dir / "index.txt"
        atomic_write(index, "".join(f"{n}\n" for n in entries), fsync=False)
        ctx.artifacts.append(index)
        ctx.task("apidocs", f"Documented {len(entries)} unit{'s' if len(entries) != 1 else ''} in {api_dir}")

    def _target_docs(self, ctx: _Context) -> None:
        index = ctx.docs_dir / "index.txt"
        atomic_write(index, (
            f"Documentation for {ctx.project}\n\n"
            f"API:          {ctx.docs_dir / 'api' / 'index.txt'}\n"
            f"Test report:  {ctx.reports_dir / 'html' / 'index.html'}\n"
        ), fsync=False)
        ctx.artifacts.append(index)
        ctx.task("docs", f"Documentation index written to {index}")


def extract_doc_comments(text: str) -> list[str]:
    """Consecutive ``#`` or ``//`` comment lines, one string per block."""
    blocks, current = [], []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#") or stripped.startswith("//"):
            current.append(stripped.lstrip("#/").strip())
        elif current:
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return blocks


def run_target(ws, project: str, target: str = DEFAULT_TARGET, toolchain: str | None = None) -> BuildResult:
    return Build(ws, toolchain).run_target(project, target)


def check_tests(ws, project: str) -> None:
    """Raise TestsFailed (or the build error) unless ``project``'s tests pass."""
    result = run_target(ws, project, "test")
    logger.debug("delivery gate build log:\n%s", result.log)
    if not result.success:
        raise result.error


def workspace_build_order(ws, strict: bool = False) -> list[str]:
    manifests = []
    for project in sorted(ws.projects):
        path = ws.project_dir(project) / MANIFEST_NAME
        if not path.is_file():
            logger.warning('"%s" has no %s yet; skipping it', project, MANIFEST_NAME)
            continue
        manifest = load_manifest(path)
        if manifest.name != project:
            raise BuildError(f'{path} names project "{manifest.name}", expected "{project}"')
        manifests.append(manifest)
    return resolve_build_order(manifests, strict=strict)


def run_workspace_target(ws, target: str = DEFAULT_TARGET, keep_going: bool = False, jobs: int = 1,
                         strict: bool = False, toolchain: str | None = None) -> list[BuildResult]:
    """Run ``target`` on every project, dependencies first."""
    if target not in PREREQUISITES:
        raise UnknownTarget(target)
    order = workspace_build_order(ws, strict)
    deps = {}
    for project in order:
        manifest = load_manifest(ws.project_dir(project) / MANIFEST_NAME)
        deps[project] = [d for d in manifest.dependencies if d in order]
    build = Build(ws, toolchain)
    if jobs <= 1:
        results = []
        failed: set[str] = set()
        for project in order:
            blocked = [d for d in deps[project] if d in failed]
            if blocked:
                results.append(_skipped(project, target, blocked))
                failed.add(project)
                continue
            result = build.run_target(project, target)
            results.append(result)
            if not result.success:
                failed.add(project)
                if not keep_going:
                    break
        return results
    return _run_parallel(build, order, deps, target, keep_going, jobs)


def _skipped(project: str, target: str, blocked) -> BuildResult:
    message = f'skipped "{project}": dependency {", ".join(blocked)} failed'
    return BuildResult(project, target, False, 0.0, message + "\n",
                       error=BuildError(message))


def _run_parallel(build: Build, order, deps, target, keep_going, jobs) -> list[BuildResult]:
    results: dict[str, BuildResult] = {}
    pending = list(order)
    running = {}
    stop = False
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        while pending or running:
            if not stop:
                for project in list(pending):
                    if len(running) >= jobs:
                        break
                    if any(d not in results for d in deps[project]):
                        continue
                    pending.remove(project)
                    blocked = [d for d in deps[project] if not results[d].success]
                    if blocked:
                        results[project] = _skipped(project, target, blocked)
                        continue
                    running[pool.submit(build.run_target, project, target)] = project
            if not running:
                if stop or not pending:
                    break
                continue
            done, _ = wait(running, return_when=FIRST_COMPLETED)
            for fut in done:
                project = running.pop(fut)
                results[project] = fut.result()
                if not results[project].success and not keep_going:
                    stop = True
    return [results[p] for p in order if p in results]


def make_deploy_tarball(ws, name: str) -> Path:
    """Write ``dist/<name>.tar.gz`` holding every bundle plus the setup scripts.

    Entries are sorted and carry fixed metadata, so identical inputs give
    byte-identical archives.
    """
    if not re.fullmatch(r"[A-Za-z0-9][A-Za-z0-9._-]*", name or ""):
        raise BuildError(f"invalid tarball name {name!r}")
    if not ws.projects:
        raise MissingBundles("the workspace has no projects to deploy")
    missing = [b for p in sorted(ws.projects) for b in bundle_names(p)
               if not (ws.lib_dir / b).is_file()]
    if missing:
        raise MissingBundles("missing bundles (run 'bfd build lib' first): " + ", ".join(missing))

    entries = {f"lib/{p.name}": p for p in ws.lib_dir.glob("*.bundle")}
    for script in ("setup.csh", "setup.sh"):
        entries[script] = ws.root / script

    raw = io.BytesIO()
    with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
        with tarfile.open(fileobj=gz, mode="w", format=tarfile.PAX_FORMAT) as tar:
            for arcname in sorted(entries):
                data = entries[arcname].read_bytes()
                info = tarfile.TarInfo(arcname)
                info.size = len(data)
                info.mtime = 0
                info.mode = 0o644
                info.uid = info.gid = 0
                info.uname = info.gname = ""
                tar.addfile(info, io.BytesIO(data))
    out = ws.root / "dist" / f"{name}.tar.gz"
    atomic_write(out, raw.getvalue(), fsync=False)
    return out
