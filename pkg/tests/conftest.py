from __future__ import annotations

from pathlib import Path

import pytest

from bfd import archive, workspace

ICEBUCKET_FILES = {
    "build.xml": b'<project name="icebucket" toolchain="sim"/>\n',
    "project.xml": b'<project name="icebucket" package="icecube.icebucket"/>\n',
    "src/icecube/icebucket/Bucket.sim": b"# A bucket.\nclass Bucket {\n  fill(\"ice\") { }\n}\n",
    "src/icecube/icebucket/package.txt": b"Package icecube.icebucket.\n",
    "src/icecube/icebucket/test/BucketTest.sim": b"assert 1 == 1\nassert 2 > 1\nassert 3 != 4\n",
    "resources/main/bucket.cfg": b"size = 3\n",
    "resources/test/fixture.txt": b"fixture\n",
}


def sim_project_files(name: str, package: str, deps=(), tests=b"assert 1 == 1\n",
                      source=b"class Thing {\n}\n") -> dict[str, bytes]:
    pkg = package.replace(".", "/")
    dep_lines = "".join(f'  <dependency name="{d}"/>\n' for d in deps)
    manifest = (f'<project name="{name}" package="{package}">\n{dep_lines}</project>\n').encode()
    return {
        "build.xml": f'<project name="{name}" toolchain="sim"/>\n'.encode(),
        "project.xml": manifest,
        f"src/{pkg}/Thing.sim": source,
        f"src/{pkg}/test/ThingTest.sim": tests,
    }


@pytest.fixture
def tools(tmp_path) -> Path:
    path = tmp_path / "tools"
    path.mkdir()
    return path


@pytest.fixture
def store(tools):
    return archive.open_store(tools / "archive")


@pytest.fixture
def seeded_store(store):
    archive.archive_commit(store, "icebucket", ICEBUCKET_FILES, "initial import")
    return store


@pytest.fixture
def make_ws(tmp_path, tools, store):
    counter = iter(range(1000))

    def make(name=None):
        root = tmp_path / (name or f"ws{next(counter)}")
        root.mkdir()
        return workspace.ws_init(root, tools, store.root)

    return make


@pytest.fixture
def ws(make_ws):
    return make_ws("work")


# acceptance summary: one PASS/FAIL line per criterion

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    n, title = marker.args
    title_, outcomes = _criteria.setdefault(n, (title, []))
    if call.when == "setup" and call.excinfo is None:
        return
    outcomes.append("FAIL" if call.excinfo is not None else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcomes = _criteria[n]
        verdict = "PASS" if outcomes and all(o == "PASS" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}")
