"""Design document model: canvas, elements, geometry and (de)serialization.

A design is a canvas plus a z-ordered list of rectangular elements
(background, images, svg shapes, text boxes).  All element geometry is
stored normalized to the canvas: centers and sizes are fractions of the
canvas width/height, which keeps perturbation magnitudes and optimizer
step sizes canvas-independent.

Documents are immutable values; edits go through ``dataclasses.replace``
or the ``with_element`` helper, so they are safe to share between
threads.

The on-disk format is line oriented plain text (UTF-8)::

    # optional comment lines
    canvas <w> <h>
    elem <kind> <cx> <cy> <w> <h> <z> <r> <g> <b> <opacity> <content_tag>

One ``elem`` line per element.  Fields are space separated; the content
tag is the remainder of the line and may contain spaces.  Floats are
written with full round-trip precision.  Comment lines start with ``#``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

#: Slack allowed when checking that an element lies inside the canvas.
EDGE_EPS = 1e-6

MIN_CANVAS = 32


class DocumentError(ValueError):
    """Base class for document construction and I/O failures."""


class ParseError(DocumentError):
    """Malformed document text; message names the offending field and line."""


class ValidationError(DocumentError):
    """Structurally well-formed document that violates a model invariant."""


class ElementKind(Enum):
    BACKGROUND = "background"
    IMAGE = "image"
    SVG = "svg"
    TEXT = "text"

    @property
    def is_graphic(self) -> bool:
        """Image-like kinds (filled rect in both raster passes)."""
        return self in (ElementKind.IMAGE, ElementKind.SVG)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in normalized coordinates, x0 <= x1, y0 <= y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValidationError(f"inverted rect {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def intersection_area(self, other: "Rect") -> float:
        iw = min(self.x1, other.x1) - max(self.x0, other.x0)
        ih = min(self.y1, other.y1) - max(self.y0, other.y0)
        if iw <= 0.0 or ih <= 0.0:
            return 0.0
        return iw * ih


def rect_iou(a: Rect, b: Rect) -> float:
    """Intersection over union of two rects; 0 when the union has no area."""
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class Element:
    """One design component.

    ``cx, cy`` are the center as fractions of the canvas, ``w, h`` the
    size as fractions.  ``z`` is the draw order (unique per document).
    ``color`` is an sRGB byte triple and ``content_tag`` an opaque label
    (glyph text or asset id).  ``w, h`` of well-formed designs stay in
    (0, 1], but perturbed documents may overflow; the rasterizer clips.
    """

    kind: ElementKind
    cx: float
    cy: float
    w: float
    h: float
    z: int
    color: tuple[int, int, int]
    content_tag: str
    opacity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))
        if not isinstance(self.kind, ElementKind):
            raise ValidationError(f"bad element kind {self.kind!r}")
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValidationError(f"element size must be positive, got w={self.w} h={self.h}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValidationError(f"element center ({self.cx}, {self.cy}) outside [0,1]")
        if not (isinstance(self.z, int) and self.z >= 0):
            raise ValidationError(f"z must be a nonnegative integer, got {self.z!r}")
        if len(self.color) != 3 or any(not (0 <= c <= 255) for c in self.color):
            raise ValidationError(f"color {self.color} outside [0,255]^3")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValidationError(f"opacity {self.opacity} outside [0,1]")
        if not self.content_tag or "\n" in self.content_tag:
            raise ValidationError("content_tag must be a non-empty single-line string")

    @property
    def rect(self) -> Rect:
        return element_rect(self)

    @property
    def area(self) -> float:
        return self.w * self.h

    def moved(self, dx: float, dy: float) -> "Element":
        return replace(self, cx=self.cx + dx, cy=self.cy + dy)

    def with_geometry(self, cx: float, cy: float, w: float, h: float) -> "Element":
        return replace(self, cx=cx, cy=cy, w=w, h=h)


def element_rect(e: Element) -> Rect:
    """Bounding rect of an element: (cx - w/2, cy - h/2, cx + w/2, cy + h/2)."""
    return Rect(e.cx - e.w / 2.0, e.cy - e.h / 2.0, e.cx + e.w / 2.0, e.cy + e.h / 2.0)


@dataclass(frozen=True)
class DesignDocument:
    """Canvas size in pixels plus elements in ascending z order.

    Construction sorts elements by z and validates: unique z values, at
    most one background, and any background first in z order spanning
    the full canvas.
    """

    canvas_w: int
    canvas_h: int
    elements: tuple[Element, ...]

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(sorted(self.elements, key=lambda e: e.z)))
        if self.canvas_w < MIN_CANVAS or self.canvas_h < MIN_CANVAS:
            raise ValidationError(
                f"canvas {self.canvas_w}x{self.canvas_h} below minimum {MIN_CANVAS}"
            )
        zs = [e.z for e in self.elements]
        if len(set(zs)) != len(zs):
            dup = sorted(z for z in set(zs) if zs.count(z) > 1)
            raise ValidationError(f"duplicate z values {dup}")
        backgrounds = [i for i, e in enumerate(self.elements) if e.kind is ElementKind.BACKGROUND]
        if len(backgrounds) > 1:
            raise ValidationError(f"{len(backgrounds)} background elements, at most 1 allowed")
        if backgrounds:
            i = backgrounds[0]
            if i != 0:
                raise ValidationError("background must come first in z order")
            bg = self.elements[0]
            if (
                abs(bg.cx - 0.5) > EDGE_EPS
                or abs(bg.cy - 0.5) > EDGE_EPS
                or abs(bg.w - 1.0) > EDGE_EPS
                or abs(bg.h - 1.0) > EDGE_EPS
            ):
                raise ValidationError("background must span the full canvas")

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def background_index(self) -> int | None:
        if self.elements and self.elements[0].kind is ElementKind.BACKGROUND:
            return 0
        return None

    @property
    def foreground_indices(self) -> tuple[int, ...]:
        """Indices of all non-background elements."""
        return tuple(
            i for i, e in enumerate(self.elements) if e.kind is not ElementKind.BACKGROUND
        )

    def with_element(self, index: int, element: Element) -> "DesignDocument":
        elems = list(self.elements)
        elems[index] = element
        return replace(self, elements=tuple(elems))

    def with_elements(self, updates: dict[int, Element]) -> "DesignDocument":
        elems = list(self.elements)
        for i, e in updates.items():
            elems[i] = e
        return replace(self, elements=tuple(elems))

    def fits_canvas(self, eps: float = EDGE_EPS) -> bool:
        """True when every element rect lies inside the unit canvas."""
        for e in self.elements:
            r = e.rect
            if r.x0 < -eps or r.y0 < -eps or r.x1 > 1.0 + eps or r.y1 > 1.0 + eps:
                return False
        return True


def _fmt(x: float) -> str:
    # repr keeps every digit needed for an exact float round trip
    return repr(float(x))


def dumps(doc: DesignDocument) -> str:
    lines = [f"canvas {doc.canvas_w} {doc.canvas_h}"]
    for e in doc.elements:
        r, g, b = e.color
        lines.append(
            f"elem {e.kind.value} {_fmt(e.cx)} {_fmt(e.cy)} {_fmt(e.w)} {_fmt(e.h)} "
            f"{e.z} {r} {g} {b} {_fmt(e.opacity)} {e.content_tag}"
        )
    return "\n".join(lines) + "\n"


def _parse_float(token: str, field: str, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: field '{field}': not a number: {token!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"line {lineno}: field '{field}': non-finite value {token!r}")
    return v


def _parse_int(token: str, field: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"line {lineno}: field '{field}': not an integer: {token!r}") from None


_KINDS = {k.value: k for k in ElementKind}

_ELEM_FIELDS = ("kind", "cx", "cy", "w", "h", "z", "r", "g", "b", "opacity", "content_tag")


def loads(text: str) -> DesignDocument:
    canvas: tuple[int, int] | None = None
    elements: list[Element] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        if head == "canvas":
            if canvas is not None:
                raise ParseError(f"line {lineno}: duplicate canvas line")
            parts = rest.split()
            if len(parts) != 2:
                raise ParseError(f"line {lineno}: canvas needs 2 fields, got {len(parts)}")
            canvas = (_parse_int(parts[0], "canvas_w", lineno), _parse_int(parts[1], "canvas_h", lineno))
        elif head == "elem":
            if canvas is None:
                raise ParseError(f"line {lineno}: elem before canvas line")
            parts = rest.split(maxsplit=10)
            if len(parts) != 11:
                raise ParseError(
                    f"line {lineno}: elem needs {len(_ELEM_FIELDS)} fields, got {len(parts)}"
                )
            kind_tok = parts[0]
            if kind_tok not in _KINDS:
                raise ParseError(f"line {lineno}: field 'kind': unknown kind {kind_tok!r}")
            try:
                elem = Element(
                    kind=_KINDS[kind_tok],
                    cx=_parse_float(parts[1], "cx", lineno),
                    cy=_parse_float(parts[2], "cy", lineno),
                    w=_parse_float(parts[3], "w", lineno),
                    h=_parse_float(parts[4], "h", lineno),
                    z=_parse_int(parts[5], "z", lineno),
                    color=(
                        _parse_int(parts[6], "r", lineno),
                        _parse_int(parts[7], "g", lineno),
                        _parse_int(parts[8], "b", lineno),
                    ),
                    opacity=_parse_float(parts[9], "opacity", lineno),
                    content_tag=parts[10],
                )
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            elements.append(elem)
        else:
            raise ParseError(f"line {lineno}: unknown record {head!r}")
    if canvas is None:
        raise ParseError("missing canvas line")
    return DesignDocument(canvas_w=canvas[0], canvas_h=canvas[1], elements=tuple(elements))


def load_document(data: bytes | str) -> DesignDocument:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return loads(data)


def save_document(doc: DesignDocument) -> bytes:
    return dumps(doc).encode("utf-8")


def read_document(path) -> DesignDocument:
    with open(path, "rb") as fh:
        return load_document(fh.read())


def write_document(doc: DesignDocument, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_document(doc))
