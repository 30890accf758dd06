"""A small, strict XML reader for bfd's own file formats.

Accepted: an optional ``<?xml ...?>`` declaration, comments, elements with
quoted attributes, whitespace and character data, the five predefined
entities and numeric character references.  Rejected: DOCTYPE, CDATA,
processing instructions, namespaces (any ``:`` in a name), and anything
that is not UTF-8.  Errors carry a 1-based line and column.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ManifestSyntaxError

_ENTITIES = {"lt": "<", "gt": ">", "amp": "&", "quot": '"', "apos": "'"}
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*")
_WS = " \t\r\n"


@dataclass
class Element:
    tag: str
    attrs: dict[str, str] = field(default_factory=dict)
    children: list["Element"] = field(default_factory=list)
    text: str = ""
    line: int = 1
    col: int = 1


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def where(self, pos=None):
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def fail(self, expected, pos=None):
        line, col = self.where(pos)
        raise ManifestSyntaxError(line, col, expected)

    def eof(self):
        return self.pos >= len(self.text)

    def peek(self, s):
        return self.text.startswith(s, self.pos)

    def expect(self, s):
        if not self.peek(s):
            self.fail(repr(s))
        self.pos += len(s)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in _WS:
            self.pos += 1

    def name(self):
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            self.fail("a name")
        self.pos = m.end()
        return m.group(0)

    def decode_refs(self, raw, start):
        if "&" not in raw:
            return raw
        out = []
        i = 0
        while i < len(raw):
            ch = raw[i]
            if ch != "&":
                out.append(ch)
                i += 1
                continue
            end = raw.find(";", i)
            if end < 0:
                self.fail("';' closing an entity reference", start + i)
            ref = raw[i + 1:end]
            if ref in _ENTITIES:
                out.append(_ENTITIES[ref])
            elif re.fullmatch(r"#[0-9]+", ref):
                out.append(self._char(int(ref[1:]), start + i))
            elif re.fullmatch(r"#x[0-9A-Fa-f]+", ref):
                out.append(self._char(int(ref[2:], 16), start + i))
            else:
                self.fail("one of the predefined entities", start + i)
            i = end + 1
        return "".join(out)

    def _char(self, code, pos):
        if code == 0 or code > 0x10FFFF or 0xD800 <= code <= 0xDFFF:
            self.fail("a valid character reference", pos)
        return chr(code)

    def comment(self):
        start = self.pos
        self.expect("<!--")
        end = self.text.find("-->", self.pos)
        if end < 0:
            self.fail("'-->'", start)
        if "--" in self.text[self.pos:end]:
            self.fail("no '--' inside a comment", self.text.find("--", self.pos))
        self.pos = end + 3

    def misc(self):
        while True:
            self.skip_ws()
            if self.peek("<!--"):
                self.comment()
            else:
                return

    def attribute_value(self):
        if self.eof() or self.text[self.pos] not in "\"'":
            self.fail("a quoted attribute value")
        quote = self.text[self.pos]
        self.pos += 1
        start = self.pos
        end = self.text.find(quote, start)
        if end < 0:
            self.fail(f"closing {quote}", start - 1)
        raw = self.text[start:end]
        if "<" in raw:
            self.fail("no '<' inside an attribute value", start + raw.index("<"))
        self.pos = end + 1
        return self.decode_refs(raw, start)

    def element(self):
        start = self.pos
        self.expect("<")
        line, col = self.where(start)
        tag = self.name()
        if self.peek(":"):
            self.fail("a name without a namespace prefix")
        el = Element(tag, line=line, col=col)
        while True:
            had_ws = self.pos < len(self.text) and self.text[self.pos] in _WS
            self.skip_ws()
            if self.peek("/>"):
                self.pos += 2
                return el
            if self.peek(">"):
                self.pos += 1
                break
            if self.eof():
                self.fail("'>' or '/>'")
            if not had_ws:
                self.fail("whitespace before an attribute")
            apos = self.pos
            aname = self.name()
            if self.peek(":"):
                self.fail("an attribute name without a namespace prefix")
            if aname in el.attrs:
                self.fail(f"a unique attribute name (duplicate {aname!r})", apos)
            self.skip_ws()
            self.expect("=")
            self.skip_ws()
            el.attrs[aname] = self.attribute_value()

        text = []
        while True:
            if self.eof():
                self.fail(f"'</{tag}>'")
            if self.peek("</"):
                self.pos += 2
                close = self.name()
                if close != tag:
                    self.fail(f"'</{tag}>'", self.pos - len(close) - 2)
                self.skip_ws()
                self.expect(">")
                el.text = "".join(text)
                return el
            if self.peek("<!--"):
                self.comment()
            elif self.peek("<![CDATA["):
                self.fail("no CDATA sections")
            elif self.peek("<?"):
                self.fail("no processing instructions")
            elif self.peek("<!"):
                self.fail("no markup declarations")
            elif self.peek("<"):
                el.children.append(self.element())
            else:
                start = self.pos
                end = self.text.find("<", start)
                end = len(self.text) if end < 0 else end
                raw = self.text[start:end]
                self.pos = end
                text.append(self.decode_refs(raw, start))


def parse(data: bytes | str) -> Element:
    """Parse a document and return its root element."""
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            prefix = data[: e.start].decode("utf-8", "replace")
            line = prefix.count("\n") + 1
            col = len(prefix) - (prefix.rfind("\n") + 1) + 1
            raise ManifestSyntaxError(line, col, "UTF-8 encoded text")
    else:
        text = data
    if text.startswith("\ufeff"):
        text = text[1:]

    r = _Reader(text)
    if re.match(r"<\?xml[ \t\r\n?]", text):
        end = text.find("?>")
        if end < 0:
            r.fail("'?>' closing the XML declaration")
        decl = text[: end]
        m = re.search(r"encoding\s*=\s*[\"']([^\"']*)[\"']", decl)
        if m and m.group(1).lower().replace("_", "-") not in ("utf-8", "utf8"):
            r.fail("encoding=\"UTF-8\"", m.start(1))
        r.pos = end + 2
    r.misc()
    if r.peek("<!DOCTYPE"):
        r.fail("no DOCTYPE declaration")
    if not r.peek("<") or r.peek("<!") or r.peek("<?"):
        r.fail("a root element")
    root = r.element()
    r.misc()
    if not r.eof():
        r.fail("end of document")
    return root


_INVALID_XML_CHARS = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ufffe\uffff\ud800-\udfff]")


def _clean(value: str) -> str:
    return _INVALID_XML_CHARS.sub("\ufffd", value)


def escape_attr(value: str) -> str:
    value = (_clean(value).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
             .replace('"', "&quot;"))
    return value.replace("\t", "&#9;").replace("\n", "&#10;").replace("\r", "&#13;")


def escape_text(value: str) -> str:
    return _clean(value).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
