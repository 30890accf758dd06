"""Unit-test execution for the sim toolchain, XML reports and HTML summaries.

A sim test file is a suite; every ``assert <int> <op> <int>`` line in it is
one test case.  Blank lines and ``#`` comments are skipped, anything else is
recorded as an error case.
"""

from __future__ import annotations

import html
import logging
import operator
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

from . import xmlsubset
from .errors import BfdError, MalformedReport
from .fsutil import atomic_write
from .xmlsubset import escape_attr, escape_text

logger = logging.getLogger(__name__)

PASS, FAIL, ERROR = "pass", "fail", "error"

OPERATORS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
_INT_RE = re.compile(r"[+-]?[0-9]+\Z")


@dataclass(frozen=True)
class TestCaseResult:
    __test__ = False

    suite: str
    test: str
    outcome: str
    message: str = ""
    location: str = ""
    duration: float = 0.0

    def __post_init__(self):
        if self.outcome not in (PASS, FAIL, ERROR):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.outcome != PASS and not self.message:
            raise ValueError("failed and errored cases need a message")


class Totals(NamedTuple):
    run: int
    passed: int
    failed: int
    errored: int


@dataclass
class TestSuiteReport:
    __test__ = False

    project: str
    cases: list[TestCaseResult] = field(default_factory=list)
    duration: float = 0.0

    @property
    def totals(self) -> Totals:
        passed = sum(c.outcome == PASS for c in self.cases)
        failed = sum(c.outcome == FAIL for c in self.cases)
        errored = sum(c.outcome == ERROR for c in self.cases)
        return Totals(len(self.cases), passed, failed, errored)

    @property
    def ok(self) -> bool:
        t = self.totals
        return t.failed + t.errored == 0

    def suites(self) -> list[str]:
        return sorted({c.suite for c in self.cases})


def evaluate_line(line: str):
    """Evaluate one sim test line.

    Returns None for blank/comment lines, otherwise ``(outcome, message)``.
    """
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    parts = stripped.split()
    if len(parts) != 4 or parts[0] != "assert":
        return ERROR, f"malformed test line: {stripped!r} (expected 'assert <int> <op> <int>')"
    _, lhs, op, rhs = parts
    if op not in OPERATORS:
        return ERROR, f"unknown comparison operator {op!r}"
    if not (_INT_RE.match(lhs) and _INT_RE.match(rhs)):
        return ERROR, f"operands must be integers: {stripped!r}"
    if OPERATORS[op](int(lhs), int(rhs)):
        return PASS, ""
    return FAIL, f"assertion failed: {int(lhs)} {op} {int(rhs)}"


def run_suite(suite: str, text: str, filename: str = "") -> list[TestCaseResult]:
    cases = []
    for lineno, line in enumerate(text.splitlines(), 1):
        t0 = time.perf_counter()
        result = evaluate_line(line)
        if result is None:
            continue
        outcome, message = result
        cases.append(TestCaseResult(
            suite=suite,
            test=f"line{lineno}",
            outcome=outcome,
            message=message,
            location=f"{filename or suite}:{lineno}" if outcome != PASS else "",
            duration=time.perf_counter() - t0,
        ))
    return cases


def is_test_source(path: str, ext: str) -> bool:
    parts = path.split("/")
    return len(parts) >= 2 and "test" in parts[:-1] and parts[-1].endswith("Test" + ext)


def suite_name(path: str, ext: str) -> str:
    return path[: -len(ext)].replace("/", ".")


def run_sim_tests(files: Mapping[str, bytes], project: str, ext: str = ".sim") -> TestSuiteReport:
    """Run every ``*Test<ext>`` found in a ``test/`` directory of ``files``.

    ``files`` maps paths relative to the source root to file contents, so the
    same function serves a project's ``src/`` tree and a built test bundle.
    """
    t0 = time.perf_counter()
    cases = []
    sources = sorted(p for p in files if is_test_source(p, ext))
    for path in sorted(sources, key=lambda p: suite_name(p, ext)):
        text = files[path].decode("utf-8", "replace")
        cases += run_suite(suite_name(path, ext), text, path)
    if not sources:
        logger.warning('no tests found for "%s"', project)
    return TestSuiteReport(project, cases, time.perf_counter() - t0)


def run_sim_tests_in_tree(project_dir, project: str, ext: str = ".sim") -> TestSuiteReport:
    src = Path(project_dir) / "src"
    files = {}
    for dirpath, _, filenames in os.walk(src):
        for name in filenames:
            path = Path(dirpath) / name
            rel = path.relative_to(src).as_posix()
            if is_test_source(rel, ext):
                files[rel] = path.read_bytes()
    return run_sim_tests(files, project, ext)


def format_time(seconds: float) -> str:
    return f"{seconds:.3f}"


def console_summary(report: TestSuiteReport) -> str:
    """xUnit text-runner style summary of ``report``."""
    progress = []
    for case in report.cases:
        progress.append(".")
        if case.outcome == FAIL:
            progress.append("F")
        elif case.outcome == ERROR:
            progress.append("E")
    lines = ["".join(progress), f"Time: {format_time(report.duration)}"]
    t = report.totals
    for outcome, noun, count in ((ERROR, "error", t.errored), (FAIL, "failure", t.failed)):
        if not count:
            continue
        lines.append(f"There {'was' if count == 1 else 'were'} {count} {noun}{'' if count == 1 else 's'}:")
        bad = [c for c in report.cases if c.outcome == outcome]
        for i, case in enumerate(bad, 1):
            lines.append(f"{i}) {case.test}({case.suite}) {case.message}")
            if case.location:
                lines.append(f"\tat {case.location}")
    lines.append("")
    if report.ok:
        lines.append(f"OK ({t.run} tests)")
    else:
        lines.append("FAILURES!!!")
        lines.append(f"Tests run: {t.run},  Failures: {t.failed},  Errors: {t.errored}")
    return "\n".join(lines) + "\n"


# XML report

def render_xml_report(report: TestSuiteReport) -> str:
    t = report.totals
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    # attribute order is part of the format
    out.append(
        f'<testsuite name="{escape_attr(report.project)}" tests="{t.run}" '
        f'failures="{t.failed}" errors="{t.errored}" time="{format_time(report.duration)}">'
    )
    for case in report.cases:
        head = (f'  <testcase classname="{escape_attr(case.suite)}" name="{escape_attr(case.test)}" '
                f'time="{format_time(case.duration)}"')
        if case.outcome == PASS:
            out.append(head + "/>")
            continue
        child = "failure" if case.outcome == FAIL else "error"
        out.append(head + ">")
        out.append(f'    <{child} message="{escape_attr(case.message)}">'
                   f"{escape_text(case.location)}</{child}>")
        out.append("  </testcase>")
    out.append("</testsuite>")
    return "\n".join(out) + "\n"


def write_xml_report(report: TestSuiteReport, reports_dir) -> Path:
    path = Path(reports_dir) / f"{report.project}.xml"
    atomic_write(path, render_xml_report(report), fsync=False)
    return path


def _int_attr(el, name, path):
    try:
        return int(el.attrs[name])
    except (KeyError, ValueError):
        raise MalformedReport(path, f"<{el.tag}> needs an integer {name!r} attribute")


def _float_attr(el, name, path):
    try:
        return float(el.attrs.get(name, "0"))
    except ValueError:
        raise MalformedReport(path, f"<{el.tag}> has a non-numeric {name!r}")


def read_xml_report(path) -> TestSuiteReport:
    path = Path(path)
    try:
        root = xmlsubset.parse(path.read_bytes())
    except (OSError, BfdError) as e:
        raise MalformedReport(path, str(e))
    if root.tag != "testsuite" or "name" not in root.attrs:
        raise MalformedReport(path, "root must be <testsuite name=...>")
    cases = []
    for el in root.children:
        if el.tag != "testcase":
            raise MalformedReport(path, f"unexpected <{el.tag}>")
        outcome, message, location = PASS, "", ""
        for child in el.children:
            if child.tag in ("failure", "error"):
                outcome = FAIL if child.tag == "failure" else ERROR
                message = child.attrs.get("message") or child.text.strip() or child.tag
                location = child.text.strip()
        cases.append(TestCaseResult(
            suite=el.attrs.get("classname", root.attrs["name"]),
            test=el.attrs.get("name", ""),
            outcome=outcome,
            message=message,
            location=location,
            duration=_float_attr(el, "time", path),
        ))
    report = TestSuiteReport(root.attrs["name"], cases, _float_attr(root, "time", path))
    declared = Totals(
        _int_attr(root, "tests", path), 0, _int_attr(root, "failures", path), _int_attr(root, "errors", path)
    )
    actual = report.totals
    if (declared.run, declared.failed, declared.errored) != (actual.run, actual.failed, actual.errored):
        raise MalformedReport(path, "declared totals disagree with the testcase elements")
    return report


# HTML

_CSS = """body { font-family: sans-serif; }
table { border-collapse: collapse; }
td, th { border: 1px solid #999; padding: 2px 8px; }
tr.fail td { background: #fdd; }
tr.pass td { background: #dfd; }
pre { margin: 0; }
"""


def _page(title: str, body: list[str]) -> str:
    return "\n".join([
        "<!DOCTYPE html>",
        "<html>",
        f"<head><meta charset=\"utf-8\"/><title>{html.escape(title)}</title>"
        f"<style>{_CSS}</style></head>",
        "<body>",
        f"<h1>{html.escape(title)}</h1>",
        *body,
        "</body>",
        "</html>",
    ]) + "\n"


def _suite_file(name: str) -> str:
    return "suite-" + re.sub(r"[^A-Za-z0-9_.-]", "_", name) + ".html"


def render_html_report(xml_paths: Iterable, out_dir) -> Path:
    """Summarise XML reports as ``index.html`` plus one page per suite."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suites: dict[str, list[TestCaseResult]] = {}
    for path in sorted(Path(p) for p in xml_paths):
        for case in read_xml_report(path).cases:
            suites.setdefault(case.suite, []).append(case)

    rows = []
    grand = [0, 0, 0, 0.0]
    for name in sorted(suites):
        cases = suites[name]
        tests = len(cases)
        failures = sum(c.outcome == FAIL for c in cases)
        errors = sum(c.outcome == ERROR for c in cases)
        elapsed = sum(c.duration for c in cases)
        grand[0] += tests
        grand[1] += failures
        grand[2] += errors
        grand[3] += elapsed
        cls = "fail" if failures or errors else "pass"
        page = _suite_file(name)
        rows.append(
            f'<tr class="{cls}"><td><a href="{page}">{html.escape(name)}</a></td>'
            f'<td class="tests">{tests}</td><td class="failures">{failures}</td>'
            f'<td class="errors">{errors}</td><td>{format_time(elapsed)}</td></tr>'
        )
        case_rows = []
        for c in cases:
            detail = "" if c.outcome == PASS else f"<pre>{html.escape(c.message)}\n{html.escape(c.location)}</pre>"
            case_rows.append(
                f'<tr class="{"pass" if c.outcome == PASS else "fail"}"><td>{html.escape(c.test)}</td>'
                f"<td>{c.outcome}</td><td>{format_time(c.duration)}</td><td>{detail}</td></tr>"
            )
        atomic_write(out_dir / page, _page(f"Suite {name}", [
            '<p><a href="index.html">Back to summary</a></p>',
            "<table>",
            "<tr><th>Test</th><th>Outcome</th><th>Time (s)</th><th>Details</th></tr>",
            *case_rows,
            "</table>",
        ]), fsync=False)

    body = [
        f'<p id="totals" data-tests="{grand[0]}" data-failures="{grand[1]}" data-errors="{grand[2]}">'
        f"Tests: {grand[0]}, Failures: {grand[1]}, Errors: {grand[2]}, "
        f"Time: {format_time(grand[3])}</p>"
    ]
    if not suites:
        body.append('<p class="notice">No tests were run.</p>')
    else:
        body += [
            "<table>",
            "<tr><th>Suite</th><th>Tests</th><th>Failures</th><th>Errors</th><th>Time (s)</th></tr>",
            *rows,
            "</table>",
        ]
    index = out_dir / "index.html"
    atomic_write(index, _page("Unit Test Results", body), fsync=False)
    return index
