import itertools
import random
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings, strategies as st

from bfd import xmlsubset
from bfd.errors import (
    CycleDetected,
    DuplicateDependency,
    ManifestError,
    ManifestSyntaxError,
    MissingDependency,
    SchemaError,
    SelfDependency,
)
from bfd.manifest import (
    DependencyGraph,
    ProjectManifest,
    parse_manifest,
    render_manifest,
    resolve_build_order,
)

GROMIT = b"""<?xml version="1.0" encoding="UTF-8"?>
<!-- gromit manifest -->
<project name="gromit" package="icecube.tools.examples">
  <dependency name="icebucket"/>
</project>
"""


# oracle: enumerate every permutation, keep the valid ones, take the least

def brute_force_order(edges: dict[str, tuple[str, ...]]):
    nodes = sorted(edges)
    valid = []
    for perm in itertools.permutations(nodes):
        pos = {n: i for i, n in enumerate(perm)}
        if all(pos[d] < pos[n] for n in nodes for d in edges[n]):
            valid.append(list(perm))
    return min(valid) if valid else None


def random_dag(rng: random.Random, n: int):
    names = rng.sample([f"p{i}" for i in range(20)], n)
    rank = list(names)
    rng.shuffle(rank)
    edges = {}
    for i, name in enumerate(rank):
        earlier = rank[:i]
        edges[name] = tuple(d for d in earlier if rng.random() < 0.35)
    return edges


def manifests_for(edges):
    return [ProjectManifest(n, "pkg", deps) for n, deps in edges.items()]


# parsing

def test_parse_gromit():
    m = parse_manifest(GROMIT)
    assert m == ProjectManifest("gromit", "icecube.tools.examples", ("icebucket",))


def test_render_roundtrip_and_elementtree_agrees():
    m = ProjectManifest("gromit", "icecube.tools.examples", ("icebucket", "other"))
    data = render_manifest(m)
    assert parse_manifest(data) == m
    root = ET.fromstring(data)
    assert root.attrib == {"name": "gromit", "package": "icecube.tools.examples"}
    assert [d.attrib["name"] for d in root] == ["icebucket", "other"]


def test_no_dependencies_self_closes():
    assert render_manifest(ProjectManifest("a", "x")) == b'<project name="a" package="x"/>\n'


@pytest.mark.parametrize("doc,exc", [
    (b'<project name="a" package="x" extra="1"/>', SchemaError),
    (b'<project name="a"/>', SchemaError),
    (b'<proj name="a" package="x"/>', SchemaError),
    (b'<project name="a" package="x"><other/></project>', SchemaError),
    (b'<project name="a" package="x"><dependency/></project>', SchemaError),
    (b'<project name="a" package="x"><dependency name="b" v="1"/></project>', SchemaError),
    (b'<project name="a" package="x">text</project>', SchemaError),
    (b'<project name="A" package="x"/>', SchemaError),
    (b'<project name="a" package="X.y"/>', SchemaError),
    (b'<project name="a" package="x"><dependency name="a"/></project>', SelfDependency),
    (b'<project name="a" package="x"><dependency name="b"/><dependency name="b"/></project>',
     DuplicateDependency),
])
def test_schema_violations(doc, exc):
    with pytest.raises(exc):
        parse_manifest(doc)


@pytest.mark.parametrize("doc", [
    b'<!DOCTYPE project><project name="a" package="x"/>',
    b'<project name="a" package="x"><![CDATA[x]]></project>',
    b'<?xml-stylesheet href="x"?><project name="a" package="x"/>',
    b'<p:project xmlns:p="urn:x" name="a" package="x"/>',
    b'<?xml version="1.0" encoding="ISO-8859-1"?><project name="a" package="x"/>',
    b'<project name="a" package="\xff"/>',
    b'<project name="a" package="x">',
    b'<project name="a" package="x"></projekt>',
    b'<project name="a" name="b" package="x"/>',
    b'<project name=a package="x"/>',
    b'<project name="a" package="x"/><project name="b" package="x"/>',
    b'<project name="&bogus;" package="x"/>',
    b"",
])
def test_syntax_errors_have_positions(doc):
    with pytest.raises(ManifestSyntaxError) as info:
        parse_manifest(doc)
    assert info.value.line >= 1 and info.value.col >= 1


def test_syntax_error_position_is_accurate():
    doc = b'<project name="a" package="x">\n  <dependency name="b"/>\n  <oops\n</project>'
    with pytest.raises(ManifestSyntaxError) as info:
        parse_manifest(doc)
    assert info.value.line == 4


def test_entities_and_char_refs():
    el = xmlsubset.parse('<a v="&lt;&amp;&#65;&#x42;&quot;"/>')
    assert el.attrs["v"] == '<&AB"'


@settings(max_examples=100)
@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30))
def test_attribute_escaping_roundtrips(value):
    clean = value.replace("￾", "").replace("￿", "")
    clean = "".join(c for c in clean if c in "\t\n\r" or ord(c) >= 0x20)
    doc = f'<a v="{xmlsubset.escape_attr(clean)}"/>'
    assert xmlsubset.parse(doc).attrs["v"] == clean
    assert ET.fromstring(doc).attrib["v"] == clean


# ordering

def test_simple_order():
    ms = [ProjectManifest("gromit", "x", ("icebucket",)), ProjectManifest("icebucket", "y")]
    assert resolve_build_order(ms) == ["icebucket", "gromit"]


def test_ties_broken_lexicographically():
    ms = [ProjectManifest(n, "x") for n in ("c", "a", "b")]
    assert resolve_build_order(ms) == ["a", "b", "c"]


def test_external_dependency_warns_or_fails(caplog):
    ms = [ProjectManifest("gromit", "x", ("icebucket",))]
    assert resolve_build_order(ms) == ["gromit"]
    assert "icebucket" in caplog.text
    with pytest.raises(MissingDependency):
        resolve_build_order(ms, strict=True)


def test_duplicate_project_rejected():
    with pytest.raises(ManifestError):
        resolve_build_order([ProjectManifest("a", "x"), ProjectManifest("a", "y")])


def test_order_matches_brute_force_on_random_dags():
    rng = random.Random(20040609)
    for _ in range(100):
        edges = random_dag(rng, rng.randint(1, 7))
        assert resolve_build_order(manifests_for(edges)) == brute_force_order(edges)


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_order_is_valid_property(data):
    n = data.draw(st.integers(1, 8))
    names = [f"n{i}" for i in range(n)]
    edges = {}
    for i, name in enumerate(names):
        edges[name] = tuple(data.draw(st.lists(st.sampled_from(names[:i]), unique=True))) if i else ()
    order = resolve_build_order(manifests_for(edges))
    pos = {n: i for i, n in enumerate(order)}
    assert sorted(order) == sorted(names)
    assert all(pos[d] < pos[n] for n in names for d in edges[n])


def test_cycle_reported_as_path():
    ms = [ProjectManifest("a", "x", ("b",)), ProjectManifest("b", "x", ("c",)),
          ProjectManifest("c", "x", ("a",)), ProjectManifest("d", "x")]
    with pytest.raises(CycleDetected) as info:
        resolve_build_order(ms)
    cycle = info.value.cycle
    assert cycle[0] == cycle[-1]
    assert set(cycle) == {"a", "b", "c"}


def test_graph_from_manifests_keeps_external():
    g = DependencyGraph.from_manifests([ProjectManifest("a", "x", ("zzz",))])
    assert g.external == {"a": ("zzz",)}
