"""project.xml manifests and inter-project build ordering.

The manifest schema is deliberately tiny::

    <project name="gromit" package="icecube.tools.examples">
      <dependency name="icebucket"/>
    </project>
"""

from __future__ import annotations

import heapq
import logging
import re
from dataclasses import dataclass, field

from . import xmlsubset
from .errors import (
    CycleDetected,
    DuplicateDependency,
    ManifestError,
    MissingDependency,
    SchemaError,
    SelfDependency,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "project.xml"
PROJECT_NAME_RE = re.compile(r"[a-z][a-z0-9-]*\Z")
PACKAGE_RE = re.compile(r"[a-z][a-z0-9]*(\.[a-z][a-z0-9]*)*\Z")


def valid_project_name(name) -> bool:
    return isinstance(name, str) and bool(PROJECT_NAME_RE.match(name))


def valid_package(package) -> bool:
    return isinstance(package, str) and bool(PACKAGE_RE.match(package))


@dataclass(frozen=True)
class ProjectManifest:
    name: str
    package: str
    dependencies: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dependencies", tuple(self.dependencies))
        if not valid_project_name(self.name):
            raise SchemaError("project", f"invalid project name {self.name!r}")
        if not valid_package(self.package):
            raise SchemaError("project", f"invalid package {self.package!r}")
        seen = set()
        for dep in self.dependencies:
            if not valid_project_name(dep):
                raise SchemaError("dependency", f"invalid project name {dep!r}")
            if dep == self.name:
                raise SelfDependency(self.name)
            if dep in seen:
                raise DuplicateDependency(dep)
            seen.add(dep)


def parse_manifest(text: bytes | str) -> ProjectManifest:
    root = xmlsubset.parse(text)
    if root.tag != "project":
        raise SchemaError(root.tag, "root element must be <project>")
    extra = set(root.attrs) - {"name", "package"}
    if extra:
        raise SchemaError("project", f"unknown attribute {sorted(extra)[0]!r}")
    for attr in ("name", "package"):
        if attr not in root.attrs:
            raise SchemaError("project", f"missing attribute {attr!r}")
    if root.text.strip():
        raise SchemaError("project", "unexpected text content")

    deps = []
    for child in root.children:
        if child.tag != "dependency":
            raise SchemaError(child.tag, "unknown element")
        if set(child.attrs) != {"name"}:
            raise SchemaError("dependency", "exactly one attribute, 'name', is allowed")
        if child.children or child.text.strip():
            raise SchemaError("dependency", "must be empty")
        deps.append(child.attrs["name"])
    return ProjectManifest(root.attrs["name"], root.attrs["package"], tuple(deps))


def render_manifest(manifest: ProjectManifest) -> bytes:
    esc = xmlsubset.escape_attr
    head = f'<project name="{esc(manifest.name)}" package="{esc(manifest.package)}"'
    if not manifest.dependencies:
        return (head + "/>\n").encode("utf-8")
    lines = [head + ">"]
    lines += [f'  <dependency name="{esc(d)}"/>' for d in manifest.dependencies]
    lines.append("</project>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_manifest(path) -> ProjectManifest:
    with open(path, "rb") as f:
        return parse_manifest(f.read())


@dataclass
class DependencyGraph:
    nodes: set[str]
    edges: dict[str, tuple[str, ...]]  # dependent -> dependencies inside the graph
    external: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_manifests(cls, manifests, strict: bool = False) -> "DependencyGraph":
        nodes = set()
        for m in manifests:
            if m.name in nodes:
                raise ManifestError(f'project "{m.name}" appears more than once')
            nodes.add(m.name)
        edges, external = {}, {}
        for m in manifests:
            inside = tuple(d for d in m.dependencies if d in nodes)
            outside = tuple(d for d in m.dependencies if d not in nodes)
            for d in outside:
                if strict:
                    raise MissingDependency(d, m.name)
                logger.warning('"%s" depends on "%s", which is not in the workspace; '
                               "assuming it has been delivered", m.name, d)
            edges[m.name] = inside
            if outside:
                external[m.name] = outside
        graph = cls(nodes, edges, external)
        cycle = graph.find_cycle()
        if cycle:
            raise CycleDetected(cycle)
        return graph

    def find_cycle(self) -> list[str] | None:
        """Return a cycle as ``[a, b, ..., a]`` following dependency edges, or None."""
        WHITE, GREY, BLACK = 0, 1, 2
        colour = dict.fromkeys(self.nodes, WHITE)
        for start in sorted(self.nodes):
            if colour[start] != WHITE:
                continue
            stack = [(start, iter(sorted(self.edges.get(start, ()))))]
            path = [start]
            colour[start] = GREY
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    colour[node] = BLACK
                    stack.pop()
                    path.pop()
                elif colour[nxt] == GREY:
                    return path[path.index(nxt):] + [nxt]
                elif colour[nxt] == WHITE:
                    colour[nxt] = GREY
                    stack.append((nxt, iter(sorted(self.edges.get(nxt, ())))))
                    path.append(nxt)
        return None

    def order(self) -> list[str]:
        # Kahn's algorithm; popping the smallest ready name yields the
        # lexicographically least valid order.
        remaining = {n: len(self.edges.get(n, ())) for n in self.nodes}
        dependents: dict[str, list[str]] = {n: [] for n in self.nodes}
        for n, deps in self.edges.items():
            for d in deps:
                dependents[d].append(n)
        ready = [n for n, count in remaining.items() if count == 0]
        heapq.heapify(ready)
        out = []
        while ready:
            n = heapq.heappop(ready)
            out.append(n)
            for m in dependents[n]:
                remaining[m] -= 1
                if remaining[m] == 0:
                    heapq.heappush(ready, m)
        if len(out) != len(self.nodes):  # pragma: no cover - cycles caught at construction
            raise CycleDetected(self.find_cycle() or [])
        return out


def resolve_build_order(manifests, strict: bool = False) -> list[str]:
    """Dependencies before dependents; ties broken by project name."""
    return DependencyGraph.from_manifests(list(manifests), strict=strict).order()
