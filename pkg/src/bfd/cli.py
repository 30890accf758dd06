"""The ``bfd`` command line.

Exit codes: 0 success, 1 declined at a prompt, 2 usage error (including a
prompt with no answer available on stdin), 3 operational error.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading
from pathlib import Path

from . import archive, build, ci, scaffold, workspace
from .errors import EXIT_FAILURE, EXIT_OK, BfdError, UsageError
from .workspace import Workspace

logger = logging.getLogger("bfd")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        synopsis = " ".join(self.format_usage().split())
        raise UsageError(f"{message}; {synopsis}")


class Prompter:
    """Asks y/n questions on stdout and reads answers from stdin."""

    def __init__(self, stdin=None, stdout=None):
        self.stdin = stdin
        self.stdout = stdout

    def __call__(self, question: str) -> bool:
        stdin = self.stdin if self.stdin is not None else sys.stdin
        stdout = self.stdout if self.stdout is not None else sys.stdout
        if stdin is None or stdin.closed:
            raise UsageError("a confirmation is required but stdin is not available; use -y")
        while True:
            stdout.write(question + "\ny/n: ")
            stdout.flush()
            answer = stdin.readline()
            if not answer:
                stdout.write("\n")
                raise UsageError("a confirmation is required but stdin has no answer; use -y")
            answer = answer.strip().lower()
            if answer in ("y", "yes"):
                return True
            if answer in ("n", "no"):
                return False


def _out(line: str) -> None:
    print(line)


def _workspace() -> Workspace:
    return Workspace.find()


def _current_project(ws: Workspace) -> str | None:
    """The registered project whose directory contains the cwd, if any."""
    here = Path.cwd().resolve()
    root = ws.root.resolve()
    if here == root or root not in here.parents:
        return None
    name = here.relative_to(root).parts[0]
    return name if name in ws.projects else None


def _project_arg(ws: Workspace, given: str | None) -> str:
    project = given or _current_project(ws)
    if project is None:
        raise UsageError("no project given and the current directory is not inside one")
    return project


# commands

def cmd_init(args) -> int:
    tools = args.tools or os.environ.get("TOOLS_PATH")
    if not tools:
        raise UsageError("init needs the tools directory (argument or $TOOLS_PATH)")
    store = args.store or os.environ.get("BFD_STORE") or str(Path(tools) / "archive")
    ws = workspace.ws_init(Path.cwd(), tools, store)
    print(f"Initialized workspace {ws.root}")
    print(f"  tools:   {ws.tools_path}")
    print(f"  archive: {ws.store_path}")
    print("Load the environment with '. setup.sh' (sh) or 'source setup.csh' (csh).")
    return EXIT_OK


def cmd_co(args) -> int:
    ws = _workspace()
    status = workspace.ws_checkout(ws, args.project)
    base = ws.projects[args.project]
    if base is None:
        print(f'"{args.project}" is not in the archive; created an empty project directory.')
    else:
        n = len(archive.read_revision(ws.store, args.project, base).snapshot)
        print(f'Checked out "{args.project}" at revision {base} ({n} file{"s" if n != 1 else ""}).')
    if status.unknown:
        print(status.describe())
    return EXIT_OK


def cmd_uadd(args) -> int:
    ws = _workspace()
    project = _project_arg(ws, args.project)
    before = set(workspace.ws_status(ws, project).added)
    status = workspace.ws_uadd(ws, project)
    for path in status.added:
        if path not in before:
            print(f"A {path}")
    return EXIT_OK


def cmd_status(args) -> int:
    ws = _workspace()
    projects = [args.project] if args.project else sorted(ws.projects)
    for project in projects:
        status = workspace.ws_status(ws, project)
        if status.clean:
            print(f'"{project}": clean (revision {ws.projects[project] or "none"})')
        else:
            print(f'"{project}":')
            print("\n".join("  " + line for line in status.describe().splitlines()))
    return EXIT_OK


def cmd_archive(args) -> int:
    ws = _workspace()
    project = _project_arg(ws, args.project)
    rev = workspace.ws_archive(ws, project, args.message, allow_empty=args.allow_empty)
    print(f'Archived "{project}" as revision {rev.seq}.')
    return EXIT_OK


def cmd_deliver(args) -> int:
    ws = _workspace()
    bump = "major" if args.major else "minor" if args.minor else "patch"
    workspace.ws_deliver(ws, args.project, bump=bump, assume_yes=args.yes, force=args.force,
                         confirm=Prompter(), out=_out)
    return EXIT_OK


def cmd_dispose(args) -> int:
    ws = _workspace()
    workspace.ws_dispose(ws, args.project, assume_yes=args.yes, confirm=Prompter(), out=_out)
    return EXIT_OK


def cmd_build(args) -> int:
    ws = _workspace()
    target = args.target or build.DEFAULT_TARGET
    if target not in build.PREREQUISITES:
        raise UsageError(f"unknown target {target!r}; choose from {', '.join(build.TARGETS)}")
    project = args.project or _current_project(ws)
    if project:
        result = build.run_target(ws, project, target, toolchain=args.toolchain)
        sys.stdout.write(result.log)
        return EXIT_OK if result.success else EXIT_FAILURE
    results = build.run_workspace_target(ws, target, keep_going=args.keep_going, jobs=args.jobs,
                                         strict=args.strict, toolchain=args.toolchain)
    for result in results:
        print(f"==> {result.project}")
        sys.stdout.write(result.log)
        print()
    failed = [r.project for r in results if not r.success]
    if failed:
        print(f"Workspace {target}: FAILED in {', '.join(failed)}")
        return EXIT_FAILURE
    print(f"Workspace {target}: {len(results)} project{'s' if len(results) != 1 else ''} built successfully")
    return EXIT_OK


def cmd_create(args) -> int:
    ws = _workspace()
    if args.kind == "project":
        if not args.package:
            raise UsageError("create project needs --package")
        created = scaffold.create_project(ws, args.name, args.package, toolchain=args.toolchain)
        for path in created:
            print(f"Created {path.relative_to(ws.root)}")
        return EXIT_OK
    project = _project_arg(ws, args.project)
    if args.kind == "package":
        path = scaffold.create_package(ws, project, args.name)
        print(f"Created {path.relative_to(ws.root)}")
        return EXIT_OK
    make = scaffold.create_class if args.kind == "class" else scaffold.create_interface
    for path in make(ws, project, args.name, subpackage=args.package):
        print(f"Created {path.relative_to(ws.root)}")
    return EXIT_OK


def cmd_tarball(args) -> int:
    ws = _workspace()
    path = build.make_deploy_tarball(ws, args.name)
    print(f"Created {path.relative_to(ws.root)}")
    return EXIT_OK


def cmd_history(args) -> int:
    if args.store:
        store = archive.ArchiveStore(Path(args.store))
    else:
        store = _workspace().store
    for entry in archive.archive_history(store, args.project):
        tags = f"  [{', '.join(entry.tags)}]" if entry.tags else ""
        stamp = entry.timestamp.strftime("%Y-%m-%d %H:%M:%S")
        print(f"{entry.seq:>4}  {stamp}  {entry.message.splitlines()[0] if entry.message else ''}{tags}")
    return EXIT_OK


def cmd_ci(args) -> int:
    config = ci.load_ci_config(args.config)
    if args.action == "status":
        state = ci.load_state(config.state_path)
        if args.html:
            sys.stdout.write(ci.ci_status_board_html(state, config))
        else:
            sys.stdout.write(ci.ci_status_board(state, config))
        return EXIT_OK
    config.work_dir.mkdir(parents=True, exist_ok=True)
    if args.action == "poll":
        state = ci.load_state(config.state_path)
        triggered, state = ci.ci_poll_once(config, state)
        if args.force and not triggered:
            triggered = ci.run_build(config, state, "manual") is not None
        ci.render_board(config, state)
        if triggered:
            rec = state.history[-1]
            print(f"Build {rec.id}: {'success' if rec.success else 'FAILED'}")
            return EXIT_OK if rec.success else EXIT_FAILURE
        print("No new commits; nothing to build.")
        return EXIT_OK

    stop = threading.Event()

    def handle(signum, frame):
        logger.info("signal %d received; stopping after the current build", signum)
        stop.set()

    signal.signal(signal.SIGINT, handle)
    signal.signal(signal.SIGTERM, handle)
    ci.ci_run_daemon(config, stop)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bfd", description="Workspace management, builds and CI for multi-project trees.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("init", help="turn the current (empty) directory into a workspace")
    s.add_argument("tools", nargs="?", help="tools directory (default $TOOLS_PATH)")
    s.add_argument("--store", help="archive location (default $BFD_STORE or <tools>/archive)")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("co", aliases=["checkout"], help="check a project out of the archive")
    s.add_argument("project")
    s.set_defaults(func=cmd_co)

    s = sub.add_parser("uadd", help="schedule all unknown files of a project for archiving")
    s.add_argument("project", nargs="?")
    s.set_defaults(func=cmd_uadd)

    s = sub.add_parser("status", help="show added, modified, missing and unknown files")
    s.add_argument("project", nargs="?")
    s.set_defaults(func=cmd_status)

    s = sub.add_parser("archive", help="commit a project's changes to the archive")
    s.add_argument("-m", "--message", required=True)
    s.add_argument("--allow-empty", action="store_true")
    s.add_argument("project", nargs="?")
    s.set_defaults(func=cmd_archive)

    s = sub.add_parser("deliver", help="tag the archived project for integration")
    s.add_argument("-j", action="store_true", help="accepted for compatibility; no effect")
    bump = s.add_mutually_exclusive_group()
    bump.add_argument("--minor", action="store_true")
    bump.add_argument("--major", action="store_true")
    s.add_argument("--force", action="store_true", help="deliver even if the tests fail")
    s.add_argument("-y", "--yes", action="store_true", help="do not ask for confirmation")
    s.add_argument("project")
    s.set_defaults(func=cmd_deliver)

    s = sub.add_parser("dispose", help="remove a project, or the whole workspace, once archived")
    s.add_argument("project", nargs="?")
    s.add_argument("-y", "--yes", action="store_true")
    s.set_defaults(func=cmd_dispose)

    s = sub.add_parser("build", help="run a build target")
    s.add_argument("target", nargs="?", help=f"one of {', '.join(build.TARGETS)} (default lib)")
    s.add_argument("project", nargs="?")
    s.add_argument("--jobs", "-J", type=int, default=1)
    s.add_argument("--keep-going", "-k", action="store_true")
    s.add_argument("--strict", action="store_true", help="fail on dependencies outside the workspace")
    s.add_argument("--toolchain", help="override the toolchain named in build.xml")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("create", help="generate project, package, class or interface skeletons")
    s.add_argument("kind", choices=["project", "class", "interface", "package"])
    s.add_argument("name")
    s.add_argument("--package", help="root package (project) or subpackage (class, interface)")
    s.add_argument("--project", "-p", help="target project (default: the one containing the cwd)")
    s.add_argument("--toolchain", default="sim")
    s.set_defaults(func=cmd_create)

    s = sub.add_parser("tarball", help="package all bundles and setup scripts for deployment")
    s.add_argument("name")
    s.set_defaults(func=cmd_tarball)

    s = sub.add_parser("history", help="list a project's archived revisions and tags")
    s.add_argument("project")
    s.add_argument("--store")
    s.set_defaults(func=cmd_history)

    s = sub.add_parser("ci", help="continuous integration")
    s.add_argument("action", choices=["run", "poll", "status"])
    s.add_argument("--config", required=True)
    s.add_argument("--html", action="store_true", help="status: print the HTML board")
    s.add_argument("--force", action="store_true", help="poll: build even without new commits")
    s.set_defaults(func=cmd_ci)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"bfd: {e}", file=sys.stderr)
        return e.exit_code
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="bfd: %(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except BfdError as e:
        message = str(e)
        if message:
            print(f"bfd: {message}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"bfd: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
