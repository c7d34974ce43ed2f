"""Strict URDF-subset reader and writer.

Accepted elements: ``robot``, ``link``, ``inertial`` (``origin``, ``mass``,
``inertia``), ``visual/geometry`` holding one ``box``, ``cylinder`` or
``sphere``, and ``joint`` of type ``revolute`` or ``fixed`` with ``origin``,
``parent``, ``child``, ``axis`` and ``limit``. Anything else is rejected.
"""

from __future__ import annotations

import xml.sax
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .model import FloatingBaseModel, LinkSpec, Shape, _assemble
from .spatial import SpatialInertia, rpy_to_matrix


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class _Node:
    tag: str
    attrs: dict
    line: int
    children: list = field(default_factory=list)


class _TreeBuilder(xml.sax.ContentHandler):
    def __init__(self):
        super().__init__()
        self.root: _Node | None = None
        self._stack: list[_Node] = []
        self._locator = None

    def setDocumentLocator(self, locator):
        self._locator = locator

    def startElement(self, name, attrs):
        node = _Node(name, dict(attrs), self._locator.getLineNumber() if self._locator else 0)
        if self._stack:
            self._stack[-1].children.append(node)
        else:
            self.root = node
        self._stack.append(node)

    def endElement(self, name):
        self._stack.pop()

    def characters(self, content):
        if content.strip():
            line = self._locator.getLineNumber() if self._locator else None
            raise ParseError(f"unexpected text {content.strip()!r}", line)


_ALLOWED_ATTRS = {
    "robot": {"name"},
    "link": {"name"},
    "inertial": set(),
    "origin": {"xyz", "rpy"},
    "mass": {"value"},
    "inertia": {"ixx", "ixy", "ixz", "iyy", "iyz", "izz"},
    "visual": set(),
    "geometry": set(),
    "box": {"size"},
    "cylinder": {"radius", "length"},
    "sphere": {"radius"},
    "joint": {"name", "type"},
    "parent": {"link"},
    "child": {"link"},
    "axis": {"xyz"},
    "limit": {"lower", "upper", "effort", "velocity"},
}


def _check(node: _Node, allowed_children: set[str]):
    extra = set(node.attrs) - _ALLOWED_ATTRS[node.tag]
    if extra:
        raise ParseError(f"<{node.tag}> has unsupported attributes {sorted(extra)}", node.line)
    for c in node.children:
        if c.tag not in allowed_children:
            raise ParseError(f"unsupported element <{c.tag}> inside <{node.tag}>", c.line)


def _floats(node: _Node, key: str, count: int, default=None) -> tuple[float, ...]:
    raw = node.attrs.get(key)
    if raw is None:
        if default is None:
            raise ParseError(f"<{node.tag}> missing attribute {key!r}", node.line)
        return default
    try:
        values = tuple(float(x) for x in raw.split())
    except ValueError:
        raise ParseError(f"<{node.tag}> attribute {key!r} is not numeric: {raw!r}", node.line) from None
    if len(values) != count or not all(np.isfinite(values)):
        raise ParseError(f"<{node.tag}> attribute {key!r} needs {count} finite numbers", node.line)
    return values


def _single(node: _Node, tag: str, required: bool = True) -> _Node | None:
    found = [c for c in node.children if c.tag == tag]
    if len(found) > 1:
        raise ParseError(f"<{node.tag}> has more than one <{tag}>", found[1].line)
    if not found:
        if required:
            raise ParseError(f"<{node.tag}> missing <{tag}>", node.line)
        return None
    return found[0]


def _parse_link(node: _Node) -> LinkSpec:
    _check(node, {"inertial", "visual"})
    name = node.attrs.get("name")
    if not name:
        raise ParseError("<link> missing name", node.line)
    inertia = SpatialInertia()
    inertial = _single(node, "inertial", required=False)
    if inertial is not None:
        _check(inertial, {"origin", "mass", "inertia"})
        origin = _single(inertial, "origin", required=False)
        xyz, rpy = (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
        if origin is not None:
            _check(origin, set())
            xyz = _floats(origin, "xyz", 3, (0.0, 0.0, 0.0))
            rpy = _floats(origin, "rpy", 3, (0.0, 0.0, 0.0))
        mass_node = _single(inertial, "mass")
        _check(mass_node, set())
        (mass,) = _floats(mass_node, "value", 1)
        if mass < 0.0:
            raise ParseError(f"link {name}: negative mass", mass_node.line)
        inode = _single(inertial, "inertia")
        _check(inode, set())
        ixx, ixy, ixz, iyy, iyz, izz = (_floats(inode, k, 1)[0] for k in ("ixx", "ixy", "ixz", "iyy", "iyz", "izz"))
        I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
        if any(rpy):
            R = rpy_to_matrix(rpy)
            I = R @ I @ R.T
        inertia = SpatialInertia(mass, np.array(xyz), I)
    shape = None
    visual = _single(node, "visual", required=False)
    if visual is not None:
        _check(visual, {"geometry"})
        geometry = _single(visual, "geometry")
        _check(geometry, {"box", "cylinder", "sphere"})
        if len(geometry.children) != 1:
            raise ParseError("<geometry> needs exactly one primitive", geometry.line)
        prim = geometry.children[0]
        _check(prim, set())
        try:
            if prim.tag == "box":
                shape = Shape("box", _floats(prim, "size", 3))
            elif prim.tag == "cylinder":
                shape = Shape("cylinder", _floats(prim, "radius", 1) + _floats(prim, "length", 1))
            else:
                shape = Shape("sphere", _floats(prim, "radius", 1))
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc), prim.line) from None
    return LinkSpec(name, inertia, shape)


def _parse_joint(node: _Node):
    _check(node, {"origin", "parent", "child", "axis", "limit"})
    name = node.attrs.get("name")
    kind = node.attrs.get("type")
    if not name:
        raise ParseError("<joint> missing name", node.line)
    if kind not in ("revolute", "fixed"):
        raise ParseError(f"joint {name}: unsupported type {kind!r}", node.line)
    parent = _single(node, "parent")
    child = _single(node, "child")
    for n in (parent, child):
        _check(n, set())
        if "link" not in n.attrs:
            raise ParseError(f"<{n.tag}> missing link", n.line)
    kw = {"kind": kind}
    origin = _single(node, "origin", required=False)
    if origin is not None:
        _check(origin, set())
        kw["origin_xyz"] = _floats(origin, "xyz", 3, (0.0, 0.0, 0.0))
        kw["origin_rpy"] = _floats(origin, "rpy", 3, (0.0, 0.0, 0.0))
    axis = _single(node, "axis", required=False)
    if axis is not None:
        _check(axis, set())
        kw["axis"] = _floats(axis, "xyz", 3)
        if kind == "revolute" and np.linalg.norm(kw["axis"]) < 1e-12:
            raise ParseError(f"joint {name}: zero axis", axis.line)
    limit = _single(node, "limit", required=False)
    if limit is not None:
        _check(limit, set())
        kw["lower"] = _floats(limit, "lower", 1, (-np.inf,))[0]
        kw["upper"] = _floats(limit, "upper", 1, (np.inf,))[0]
        if kw["lower"] > kw["upper"]:
            raise ParseError(f"joint {name}: lower limit exceeds upper limit", limit.line)
    return (name, parent.attrs["link"], child.attrs["link"], kw, node.line)


def parse_model(text: str) -> FloatingBaseModel:
    """Parse URDF-subset text into a validated :class:`FloatingBaseModel`.

    Raises:
        ParseError: malformed XML or unsupported content, with its line.
        TopologyError: the joints do not form a single rooted tree.
    """
    builder = _TreeBuilder()
    try:
        xml.sax.parseString(text.encode("utf-8"), builder)
    except xml.sax.SAXParseException as exc:
        raise ParseError(exc.getMessage(), exc.getLineNumber()) from None
    root = builder.root
    if root is None or root.tag != "robot":
        raise ParseError("root element must be <robot>", root.line if root else None)
    _check(root, {"link", "joint"})
    links = [_parse_link(c) for c in root.children if c.tag == "link"]
    if not links:
        raise ParseError("model has no links", root.line)
    records = [_parse_joint(c) for c in root.children if c.tag == "joint"]
    return _assemble(root.attrs.get("name", "model"), links, records)


def _fmt(x: float) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return " ".join(_fmt(x) for x in v)


def serialize_model(model: FloatingBaseModel) -> str:
    """Emit the model in the accepted URDF subset (inverse of :func:`parse_model`)."""
    out = ['<?xml version="1.0" encoding="utf-8"?>', f'<robot name="{model.name}">']
    for link in model.links:
        out.append(f'  <link name="{link.name}">')
        I = link.inertia
        out.append("    <inertial>")
        out.append(f'      <origin xyz="{_vec(I.com)}" rpy="0.0 0.0 0.0"/>')
        out.append(f'      <mass value="{_fmt(I.mass)}"/>')
        Ic = I.inertia_com
        out.append(
            f'      <inertia ixx="{_fmt(Ic[0, 0])}" ixy="{_fmt(Ic[0, 1])}" ixz="{_fmt(Ic[0, 2])}" '
            f'iyy="{_fmt(Ic[1, 1])}" iyz="{_fmt(Ic[1, 2])}" izz="{_fmt(Ic[2, 2])}"/>'
        )
        out.append("    </inertial>")
        if link.shape is not None:
            s = link.shape
            if s.kind == "box":
                prim = f'<box size="{_vec(s.dims)}"/>'
            elif s.kind == "cylinder":
                prim = f'<cylinder radius="{_fmt(s.dims[0])}" length="{_fmt(s.dims[1])}"/>'
            else:
                prim = f'<sphere radius="{_fmt(s.dims[0])}"/>'
            out.append(f"    <visual><geometry>{prim}</geometry></visual>")
        out.append("  </link>")
    for j in model.joints:
        out.append(f'  <joint name="{j.name}" type="{j.kind}">')
        out.append(f'    <origin xyz="{_vec(j.origin_xyz)}" rpy="{_vec(j.origin_rpy)}"/>')
        out.append(f'    <parent link="{model.links[j.parent].name}"/>')
        out.append(f'    <child link="{model.links[j.child].name}"/>')
        if j.kind == "revolute":
            out.append(f'    <axis xyz="{_vec(j.axis)}"/>')
            if np.isfinite(j.lower) and np.isfinite(j.upper):
                out.append(f'    <limit lower="{_fmt(j.lower)}" upper="{_fmt(j.upper)}"/>')
        out.append("  </joint>")
    out.append("</robot>")
    return "\n".join(out) + "\n"


BUILTIN_MODELS = ("double_pendulum", "human3", "chain5", "twin_arm")


def load_model(source: str | Path) -> FloatingBaseModel:
    """Load a built-in model by name or a model file by path."""
    if str(source) in BUILTIN_MODELS:
        text = resources.files("floatbase").joinpath("data", f"{source}.urdf").read_text(encoding="utf-8")
        return parse_model(text)
    return parse_model(Path(source).read_text(encoding="utf-8"))
