"""Skeleton generation for projects, packages, classes and interfaces.

Templates can be overridden per toolchain by dropping files named after the
template kind into ``<tools>/templates/<toolchain>/``.  Placeholders are
``{{PROJECT}}``, ``{{PACKAGE}}``, ``{{NAME}}`` and ``{{DATE}}``.
"""

from __future__ import annotations

import re
from datetime import date as _date
from pathlib import Path

from .errors import (
    AlreadyScaffolded,
    ClassExists,
    InterfaceExists,
    InvalidName,
    InvalidPackage,
    NotScaffolded,
    PackageExists,
    TemplateError,
)
from .fsutil import create_exclusive
from .manifest import MANIFEST_NAME, load_manifest, valid_package
from .toolchain import BUILDFILE, SIM, Toolchain, load_toolchain, read_buildfile

TEMPLATE_KINDS = ("project-buildfile", "manifest", "package-doc", "class", "interface", "test")
PLACEHOLDERS = ("PROJECT", "PACKAGE", "NAME", "DATE")
CLASS_NAME_RE = re.compile(r"[A-Z][A-Za-z0-9]*\Z")
RESOURCE_DIRS = ("main", "test")

_PLACEHOLDER_RE = re.compile(r"\{\{([A-Za-z_]+)\}\}")


def _default_templates(toolchain_id: str) -> dict[str, str]:
    return {
        "project-buildfile": (
            "<!-- Build file for project {{PROJECT}}, created {{DATE}}.\n"
            "     The targets (clean, compile, lib, test, report, docs, apidocs)\n"
            "     are provided by bfd; run 'bfd build <target>' here. -->\n"
            f'<project name="{{{{PROJECT}}}}" toolchain="{toolchain_id}"/>\n'
        ),
        "manifest": (
            '<project name="{{PROJECT}}" package="{{PACKAGE}}">\n'
            '  <!-- list other projects this one needs, e.g.\n'
            '  <dependency name="other-project"/> -->\n'
            "</project>\n"
        ),
        "package-doc": "Package {{PACKAGE}} of project {{PROJECT}}.\n",
        "class": (
            "# {{PACKAGE}}.{{NAME}}\n"
            "# Created {{DATE}} for project {{PROJECT}}.\n"
            "class {{NAME}} {\n"
            "}\n"
        ),
        "interface": (
            "# {{PACKAGE}}.{{NAME}}\n"
            "# Created {{DATE}} for project {{PROJECT}}.\n"
            "interface {{NAME}} {\n"
            "}\n"
        ),
        "test": (
            "# Tests for {{PACKAGE}}.{{NAME}} in project {{PROJECT}}, created {{DATE}}.\n"
            "# Each line 'assert <int> <op> <int>' is one test case.\n"
            "# Replace this placeholder with tests of {{NAME}}'s requirements.\n"
            "assert 0 == 0\n"
        ),
    }


def load_template(kind: str, toolchain_id: str = SIM, tools_path=None) -> str:
    if kind not in TEMPLATE_KINDS:
        raise TemplateError(f"unknown template kind {kind!r}")
    if tools_path is not None:
        override = Path(tools_path) / "templates" / toolchain_id / kind
        if override.is_file():
            return override.read_text("utf-8")
    return _default_templates(toolchain_id)[kind]


def render_template(body: str, values: dict[str, str]) -> str:
    def sub(m):
        key = m.group(1)
        if key not in values:
            raise TemplateError(f"no value for placeholder {{{{{key}}}}}")
        return values[key]

    out = _PLACEHOLDER_RE.sub(sub, body)
    if "{{" in out:
        raise TemplateError("template has a malformed or unresolved placeholder")
    return out


class _Renderer:
    def __init__(self, ws, project: str, toolchain: Toolchain, package: str, today: str):
        self.ws = ws
        self.toolchain = toolchain
        self.values = {"PROJECT": project, "PACKAGE": package, "NAME": "", "DATE": today}

    def __call__(self, kind: str, **overrides) -> str:
        body = load_template(kind, self.toolchain.id, self.ws.tools_path)
        return render_template(body, {**self.values, **overrides})


def _today(today) -> str:
    return (today or _date.today()).isoformat()


def package_path(package: str) -> str:
    return package.replace(".", "/")


def _project_context(ws, project: str):
    ws.require(project)
    pdir = ws.project_dir(project)
    if not (pdir / MANIFEST_NAME).is_file() or not (pdir / BUILDFILE).is_file():
        raise NotScaffolded(f'"{project}" has not been scaffolded; run "bfd create project {project}"')
    manifest = load_manifest(pdir / MANIFEST_NAME)
    _, toolchain_id = read_buildfile(pdir)
    return pdir, manifest, load_toolchain(toolchain_id, ws.tools_path)


def create_project(ws, project: str, package: str, toolchain: str = SIM, today=None) -> list[Path]:
    """Populate a checked-out project with its default files."""
    ws.require(project)
    if not valid_package(package):
        raise InvalidPackage(f"invalid package name {package!r}")
    tc = load_toolchain(toolchain, ws.tools_path)
    pdir = ws.project_dir(project)
    for name in (BUILDFILE, MANIFEST_NAME, "src", "resources"):
        if (pdir / name).exists():
            raise AlreadyScaffolded(f'"{project}" already has {name}')

    render = _Renderer(ws, project, tc, package, _today(today))
    pkg_dir = pdir / "src" / package_path(package)
    files = {
        pdir / BUILDFILE: render("project-buildfile"),
        pdir / MANIFEST_NAME: render("manifest"),
        pkg_dir / tc.package_doc: render("package-doc"),
        pkg_dir / "test" / tc.package_doc: render("package-doc", PACKAGE=package + ".test"),
    }
    created = []
    for path, text in files.items():
        create_exclusive(path, text)
        created.append(path)
    for sub in RESOURCE_DIRS:
        (pdir / "resources" / sub).mkdir(parents=True)
        created.append(pdir / "resources" / sub)
    return created


def _create_unit(ws, project: str, name: str, kind: str, exists_error, subpackage=None,
                 today=None) -> tuple[Path, Path]:
    if not CLASS_NAME_RE.match(name or ""):
        raise InvalidName(f"{name!r} is not an UpperCamelCase identifier")
    pdir, manifest, tc = _project_context(ws, project)
    package = manifest.package + (f".{subpackage}" if subpackage else "")
    if subpackage and not valid_package(package):
        raise InvalidPackage(f"invalid package name {package!r}")
    pkg_dir = pdir / "src" / package_path(package)
    if not pkg_dir.is_dir():
        raise InvalidPackage(f"package {package} does not exist; create it first")
    source = pkg_dir / f"{name}{tc.source_ext}"
    test = pkg_dir / "test" / f"{name}Test{tc.source_ext}"
    if source.exists() or test.exists():
        raise exists_error(f"{package}.{name} already exists")

    render = _Renderer(ws, project, tc, package, _today(today))
    source_text = render(kind, NAME=name)
    test_text = render("test", NAME=name)
    create_exclusive(source, source_text)
    try:
        create_exclusive(test, test_text)
    except FileExistsError:
        source.unlink()
        raise exists_error(f"{package}.{name} already exists")
    return source, test


def create_class(ws, project: str, class_name: str, subpackage=None, today=None) -> tuple[Path, Path]:
    return _create_unit(ws, project, class_name, "class", ClassExists, subpackage, today)


def create_interface(ws, project: str, name: str, subpackage=None, today=None) -> tuple[Path, Path]:
    return _create_unit(ws, project, name, "interface", InterfaceExists, subpackage, today)


def create_package(ws, project: str, subpackage: str, today=None) -> Path:
    """Create ``<root package>.<subpackage>`` with its test directory."""
    pdir, manifest, tc = _project_context(ws, project)
    package = f"{manifest.package}.{subpackage}"
    if not subpackage or not valid_package(package):
        raise InvalidPackage(f"invalid package name {package!r}")
    target = pdir / "src" / package_path(package)
    if target.exists():
        raise PackageExists(f"package {package} already exists")
    if not target.parent.is_dir():
        raise InvalidPackage(f"parent package of {package} does not exist")
    render = _Renderer(ws, project, tc, package, _today(today))
    create_exclusive(target / tc.package_doc, render("package-doc"))
    create_exclusive(target / "test" / tc.package_doc, render("package-doc", PACKAGE=package + ".test"))
    return target
