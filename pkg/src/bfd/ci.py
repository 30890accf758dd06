"""Continuous integration: build when the archive changes, on a schedule, or on demand.

A build is started only when no other build is running; commits that land
while a build runs are picked up together by the next poll.  State lives in
``<workdir>/state.rec`` and is rewritten atomically, so a restarted daemon
carries on from the last recorded build.

Config file (``key: value`` lines, ``#`` comments)::

    store: /path/to/archive
    projects: ALL                      # or a space separated list
    poll_interval: 5
    schedule: 00:00                    # UTC, repeatable
    configuration: nightly sim test    # name toolchain target, repeatable
    workdir: ci                        # default: ci/ next to the config file
    tools: /path/to/tools              # optional
"""

from __future__ import annotations

import html
import logging
import shutil
import threading
from dataclasses import dataclass, field
from datetime import datetime, time as dtime, timedelta, timezone
from pathlib import Path
from typing import Callable

from . import archive
from .build import PREREQUISITES, run_workspace_target
from .errors import BfdError, CiConfigError, StoreUnavailable
from .fsutil import atomic_write
from .testreport import render_html_report
from .workspace import ws_checkout, ws_init

logger = logging.getLogger(__name__)

DEFAULT_POLL_INTERVAL = 5.0
KEEP_FAILED_SCRATCH = 3
BOARD_COLUMNS = 10
TRIGGERS = ("commit", "schedule", "manual")


@dataclass(frozen=True)
class Configuration:
    name: str
    toolchain: str = "sim"
    target: str = "test"


@dataclass
class CiConfig:
    store_path: Path
    work_dir: Path
    projects: list[str] | None = None  # None means every project in the store
    poll_interval: float = DEFAULT_POLL_INTERVAL
    schedules: list[dtime] = field(default_factory=list)
    configurations: list[Configuration] = field(default_factory=lambda: [Configuration("default")])
    tools_path: Path | None = None

    def __post_init__(self):
        self.store_path = Path(self.store_path)
        self.work_dir = Path(self.work_dir)
        if self.poll_interval < 1:
            raise CiConfigError(f"poll_interval must be at least 1 second, not {self.poll_interval}")
        names = [c.name for c in self.configurations]
        if not names:
            raise CiConfigError("at least one configuration is required")
        if len(set(names)) != len(names):
            raise CiConfigError("configuration names must be unique")
        for c in self.configurations:
            if c.target not in PREREQUISITES:
                raise CiConfigError(f"configuration {c.name}: unknown target {c.target!r}")

    @property
    def state_path(self) -> Path:
        return self.work_dir / "state.rec"


def load_ci_config(path) -> CiConfig:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except OSError as e:
        raise CiConfigError(f"cannot read CI config {path}: {e}")
    base = path.resolve().parent

    def resolve(value):
        p = Path(value).expanduser()
        return p if p.is_absolute() else base / p

    kwargs: dict = {"schedules": [], "configurations": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise CiConfigError(f"{path}:{lineno}: expected 'key: value'")
        if key == "store":
            kwargs["store_path"] = resolve(value)
        elif key == "workdir":
            kwargs["work_dir"] = resolve(value)
        elif key == "tools":
            kwargs["tools_path"] = resolve(value)
        elif key == "projects":
            kwargs["projects"] = None if value == "ALL" else value.split()
        elif key == "poll_interval":
            try:
                kwargs["poll_interval"] = float(value)
            except ValueError:
                raise CiConfigError(f"{path}:{lineno}: poll_interval must be a number")
        elif key == "schedule":
            try:
                kwargs["schedules"].append(dtime.fromisoformat(value))
            except ValueError:
                raise CiConfigError(f"{path}:{lineno}: schedule must be HH:MM")
        elif key == "configuration":
            parts = value.split()
            if len(parts) != 3:
                raise CiConfigError(f"{path}:{lineno}: configuration needs 'name toolchain target'")
            kwargs["configurations"].append(Configuration(*parts))
        else:
            raise CiConfigError(f"{path}:{lineno}: unknown key {key!r}")
    if "store_path" not in kwargs:
        raise CiConfigError(f"{path}: 'store' is required")
    kwargs.setdefault("work_dir", base / "ci")
    if not kwargs["configurations"]:
        del kwargs["configurations"]
    return CiConfig(**kwargs)


@dataclass
class ConfigResult:
    name: str
    success: bool
    log: str  # relative to the CI work dir
    report: str = ""


@dataclass
class BuildRecord:
    id: int
    trigger: str
    started: datetime
    finished: datetime
    seqs: dict[str, int] = field(default_factory=dict)
    results: list[ConfigResult] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return all(r.success for r in self.results)


@dataclass
class CiState:
    last_built_seq: dict[str, int] = field(default_factory=dict)
    in_progress: bool = False
    history: list[BuildRecord] = field(default_factory=list)
    schedule_marks: dict[str, datetime] = field(default_factory=dict)
    next_id: int = 1

    def __post_init__(self):
        self._guard = threading.Lock()


def _ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _parse_ts(text: str) -> datetime:
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)


def save_state(state: CiState, path) -> None:
    lines = [f"next_id: {state.next_id}", f"in_progress: {int(state.in_progress)}"]
    for project in sorted(state.last_built_seq):
        lines.append(f"last_built: {project} {state.last_built_seq[project]}")
    for slot in sorted(state.schedule_marks):
        lines.append(f"schedule_mark: {slot} {_ts(state.schedule_marks[slot])}")
    for rec in state.history:
        lines.append(f"build: {rec.id} {rec.trigger} {_ts(rec.started)} {_ts(rec.finished)}")
        for project in sorted(rec.seqs):
            lines.append(f"built: {rec.id} {project} {rec.seqs[project]}")
        for r in rec.results:
            lines.append(f"result: {rec.id} {r.name} {'pass' if r.success else 'fail'} "
                         f"{r.log} {r.report or '-'}")
    atomic_write(path, "\n".join(lines) + "\n")


def load_state(path) -> CiState:
    state = CiState()
    try:
        text = Path(path).read_text("utf-8")
    except FileNotFoundError:
        return state
    records: dict[int, BuildRecord] = {}
    for line in text.splitlines():
        key, _, value = line.partition(": ")
        parts = value.split(" ")
        if key == "next_id":
            state.next_id = int(value)
        elif key == "last_built":
            state.last_built_seq[parts[0]] = int(parts[1])
        elif key == "schedule_mark":
            state.schedule_marks[parts[0]] = _parse_ts(parts[1])
        elif key == "build":
            rec = BuildRecord(int(parts[0]), parts[1], _parse_ts(parts[2]), _parse_ts(parts[3]))
            records[rec.id] = rec
            state.history.append(rec)
        elif key == "built":
            records[int(parts[0])].seqs[parts[1]] = int(parts[2])
        elif key == "result":
            report = "" if parts[4] == "-" else parts[4]
            records[int(parts[0])].results.append(ConfigResult(parts[1], parts[2] == "pass", parts[3], report))
    # a persisted in_progress flag belongs to a daemon that died mid-build
    state.in_progress = False
    return state


def _now() -> datetime:
    return datetime.now(timezone.utc)


def watched_projects(config: CiConfig) -> list[str]:
    if config.projects is not None:
        return list(config.projects)
    return archive.archive_projects(archive.ArchiveStore(config.store_path))


def observe(config: CiConfig) -> dict[str, int]:
    """Latest archived seq of every watched project."""
    store = archive.ArchiveStore(config.store_path)
    if not store.exists():
        raise StoreUnavailable(f"archive {config.store_path} is not available")
    seqs = {}
    for project in watched_projects(config):
        latest = archive.archive_latest(store, project)
        if latest is not None:
            seqs[project] = latest.seq
    return seqs


Builder = Callable[[CiConfig, Configuration, dict, int], ConfigResult]


def build_configuration(config: CiConfig, conf: Configuration, seqs: dict[str, int],
                        build_id: int) -> ConfigResult:
    """Check ``seqs`` out into a scratch workspace and run ``conf.target`` on it."""
    log_dir = config.work_dir / "logs" / str(build_id)
    log_dir.mkdir(parents=True, exist_ok=True)
    scratch = config.work_dir / "scratch" / f"{build_id}-{conf.name}"
    if scratch.exists():
        shutil.rmtree(scratch)
    scratch.mkdir(parents=True)
    tools = config.tools_path or config.work_dir / "tools"
    tools.mkdir(parents=True, exist_ok=True)

    chunks = [f"CI build {build_id}, configuration {conf.name} "
              f"(toolchain {conf.toolchain}, target {conf.target})"]
    chunks += [f"  {p} at revision {seqs[p]}" for p in sorted(seqs)]
    success = False
    ws = None
    try:
        ws = ws_init(scratch, tools, config.store_path)
        for project in sorted(seqs):
            ws_checkout(ws, project, seqs[project])
        results = run_workspace_target(ws, conf.target, toolchain=conf.toolchain)
        for r in results:
            chunks += ["", f"== {r.project} ==", r.log.rstrip("\n")]
        success = all(r.success for r in results)
    except BfdError as e:
        chunks += ["", f"error: {e}"]

    report_dir = log_dir / f"{conf.name}-reports"
    xmls = []
    if ws is not None:
        for project in sorted(seqs):
            for xml in sorted((ws.project_dir(project) / "build" / "test-reports").glob("*.xml")):
                report_dir.mkdir(parents=True, exist_ok=True)
                shutil.copyfile(xml, report_dir / xml.name)
                xmls.append(report_dir / xml.name)
    report_rel = ""
    try:
        index = render_html_report(xmls, report_dir / "html")
        report_rel = index.relative_to(config.work_dir).as_posix()
    except BfdError as e:
        chunks.append(f"could not render test report: {e}")

    chunks += ["", "BUILD SUCCESSFUL" if success else "BUILD FAILED"]
    log_path = log_dir / f"{conf.name}.log"
    atomic_write(log_path, "\n".join(chunks) + "\n", fsync=False)

    if success:
        shutil.rmtree(scratch, ignore_errors=True)
    else:
        _prune_failed_scratch(config)
    return ConfigResult(conf.name, success, log_path.relative_to(config.work_dir).as_posix(), report_rel)


def _prune_failed_scratch(config: CiConfig) -> None:
    root = config.work_dir / "scratch"
    kept = sorted(root.iterdir(), key=lambda p: (int(p.name.split("-", 1)[0]), p.name))
    for old in kept[:-KEEP_FAILED_SCRATCH]:
        shutil.rmtree(old, ignore_errors=True)


def run_build(config: CiConfig, state: CiState, trigger: str, seqs: dict[str, int] | None = None,
              builder: Builder | None = None, now: Callable[[], datetime] = _now) -> BuildRecord | None:
    """Run one build for every configuration; None if another build is in progress."""
    if trigger not in TRIGGERS:
        raise ValueError(f"unknown trigger {trigger!r}")
    if not state._guard.acquire(blocking=False):
        return None
    builder = builder or build_configuration
    try:
        if seqs is None:
            seqs = observe(config)
        build_id = state.next_id
        state.next_id += 1
        state.in_progress = True
        save_state(state, config.state_path)
        started = now()
        logger.info("build %d (%s) started for %s", build_id, trigger,
                    ", ".join(f"{p}@{s}" for p, s in sorted(seqs.items())) or "no projects")
        results = []
        try:
            for conf in config.configurations:
                try:
                    results.append(builder(config, conf, dict(seqs), build_id))
                except BfdError as e:
                    logger.error("configuration %s failed to build: %s", conf.name, e)
                    results.append(ConfigResult(conf.name, False, ""))
        finally:
            record = BuildRecord(build_id, trigger, started, now(), dict(seqs), results)
            state.history.append(record)
            for project, seq in seqs.items():
                state.last_built_seq[project] = max(seq, state.last_built_seq.get(project, 0))
            state.in_progress = False
            save_state(state, config.state_path)
        logger.info("build %d finished: %s", build_id, "success" if record.success else "FAILED")
        return record
    finally:
        state._guard.release()


def ci_poll_once(config: CiConfig, state: CiState, builder: Builder | None = None,
                 now: Callable[[], datetime] = _now) -> tuple[bool, CiState]:
    """Build if any watched project has a commit newer than the last build."""
    if state.in_progress:
        return False, state
    try:
        seqs = observe(config)
    except (StoreUnavailable, OSError) as e:
        logger.warning("poll skipped: %s", e)
        return False, state
    if not any(seq > state.last_built_seq.get(p, 0) for p, seq in seqs.items()):
        return False, state
    record = run_build(config, state, "commit", seqs, builder, now)
    return record is not None, state


def due_schedules(config: CiConfig, state: CiState, now: datetime) -> list[str]:
    """Schedule slots whose latest occurrence has not been built yet.

    The first time a slot is seen its most recent occurrence is only
    remembered, so starting the daemon never fires a missed build.
    """
    due = []
    for slot in config.schedules:
        key = slot.strftime("%H:%M")
        occurrence = datetime.combine(now.date(), slot, tzinfo=timezone.utc)
        if occurrence > now:
            occurrence -= timedelta(days=1)
        mark = state.schedule_marks.get(key)
        if mark is None:
            state.schedule_marks[key] = occurrence
        elif occurrence > mark:
            state.schedule_marks[key] = occurrence
            due.append(key)
    return due


def ci_tick(config: CiConfig, state: CiState, now: datetime, builder: Builder | None = None,
            clock: Callable[[], datetime] = _now) -> list[BuildRecord]:
    built = []
    if due_schedules(config, state, now):
        try:
            record = run_build(config, state, "schedule", None, builder, clock)
        except (StoreUnavailable, OSError) as e:
            logger.warning("scheduled build skipped: %s", e)
            record = None
        if record:
            built.append(record)
    triggered, _ = ci_poll_once(config, state, builder, clock)
    if triggered:
        built.append(state.history[-1])
    return built


def ci_run_daemon(config: CiConfig, stop: threading.Event | None = None,
                  clock: Callable[[], datetime] = _now, sleep: Callable[[float], None] | None = None,
                  builder: Builder | None = None, max_ticks: int | None = None) -> CiState:
    """Poll until ``stop`` is set (or ``max_ticks`` ticks have run).

    ``clock`` and ``sleep`` exist so tests can drive simulated time.
    """
    stop = stop or threading.Event()
    sleep = sleep or (lambda seconds: stop.wait(seconds))
    config.work_dir.mkdir(parents=True, exist_ok=True)
    state = load_state(config.state_path)
    logger.info("CI daemon started; watching %s every %gs",
                "all projects" if config.projects is None else ", ".join(config.projects),
                config.poll_interval)
    ticks = 0
    try:
        while not stop.is_set():
            ci_tick(config, state, clock(), builder, clock)
            render_board(config, state)
            ticks += 1
            if max_ticks is not None and ticks >= max_ticks:
                break
            sleep(config.poll_interval)
    finally:
        save_state(state, config.state_path)
        render_board(config, state)
        logger.info("CI daemon stopped")
    return state


# status board

def _board_columns(state: CiState, limit: int) -> list[BuildRecord]:
    return state.history[-limit:]


def _row_names(config: CiConfig | None, state: CiState) -> list[str]:
    names = [c.name for c in config.configurations] if config else []
    for rec in state.history:
        for r in rec.results:
            if r.name not in names:
                names.append(r.name)
    return names


def _cell(rec: BuildRecord, name: str) -> ConfigResult | None:
    for r in rec.results:
        if r.name == name:
            return r
    return None


def ci_status_board(state: CiState, config: CiConfig | None = None, limit: int = BOARD_COLUMNS) -> str:
    """Plain-text grid: one row per configuration, one column per recent build."""
    builds = _board_columns(state, limit)
    header = ["configuration"] + [f"#{b.id} {b.trigger}" for b in builds]
    if state.in_progress:
        header.append("now")
    rows = [header]
    if builds or state.in_progress:
        for name in _row_names(config, state):
            row = [name]
            for b in builds:
                r = _cell(b, name)
                row.append("-" if r is None else ("pass" if r.success else "FAIL"))
            if state.in_progress:
                row.append("building")
            rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def ci_status_board_html(state: CiState, config: CiConfig | None = None, limit: int = BOARD_COLUMNS) -> str:
    builds = _board_columns(state, limit)
    head = "".join(f"<th>#{b.id} {html.escape(b.trigger)}<br/>{b.finished:%Y-%m-%d %H:%M}</th>"
                   for b in builds)
    if state.in_progress:
        head += "<th>now</th>"
    rows = []
    if builds or state.in_progress:
        for name in _row_names(config, state):
            cells = []
            for b in builds:
                r = _cell(b, name)
                if r is None:
                    cells.append('<td class="none">-</td>')
                    continue
                status = "pass" if r.success else "fail"
                links = f'<a href="{html.escape(r.log)}">log</a>' if r.log else ""
                if r.report:
                    links += f' <a href="{html.escape(r.report)}">tests</a>'
                cells.append(f'<td class="{status}">{status} {links}</td>')
            if state.in_progress:
                cells.append('<td class="building">building</td>')
            rows.append(f"<tr><th>{html.escape(name)}</th>{''.join(cells)}</tr>")
    return "\n".join([
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\"/><title>Build status</title>",
        "<style>td.pass{background:#8f8} td.fail{background:#f88} td.building{background:#ff8}"
        " td,th{border:1px solid #999;padding:2px 6px} table{border-collapse:collapse}</style>",
        "</head><body><h1>Build status</h1>",
        "<table>",
        f"<tr><th>configuration</th>{head}</tr>",
        *rows,
        "</table>",
        "</body></html>",
    ]) + "\n"


def render_board(config: CiConfig, state: CiState) -> Path:
    path = config.work_dir / "board.html"
    atomic_write(path, ci_status_board_html(state, config), fsync=False)
    return path
