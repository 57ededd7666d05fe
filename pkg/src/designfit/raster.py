"""Rasterization of design documents.

Two raster views feed the scorer:

* the *rendition*: what the design looks like — elements painted in
  ascending z with alpha blending, text boxes drawn as horizontal glyph
  bars so they are texturally distinct from solid fills;
* the *layout encoding*: a color-coded map of element type and pairwise
  overlap category, which exposes the stacking structure of the design
  to the model far more directly than the rendition does.

Both are float arrays of shape (h, w, 3) with values in [0, 1].  A pixel
belongs to a rect iff its center lies inside the half-open span
[x0, x1) x [y0, y1); shared edges therefore never double-claim pixels.
Painting is pure and deterministic: identical documents give
bit-identical rasters.
"""

from __future__ import annotations

import numpy as np

from .document import DesignDocument, Element, ElementKind

# Layout-encoding colors, as bytes out of 255.  Overlap entries are named
# topmost-element-first; Svg counts as Image; backgrounds are ignored.
LAYOUT_IMAGE = (0, 100, 0)
LAYOUT_TEXT = (0, 0, 100)
LAYOUT_TEXT_OVER_TEXT = (0, 0, 0)
LAYOUT_TEXT_OVER_IMAGE = (100, 0, 0)
LAYOUT_IMAGE_OVER_TEXT = (100, 100, 0)
LAYOUT_IMAGE_OVER_IMAGE = (0, 100, 100)
LAYOUT_EMPTY = (255, 255, 255)

LEGAL_LAYOUT_COLORS = (
    LAYOUT_IMAGE,
    LAYOUT_TEXT,
    LAYOUT_TEXT_OVER_TEXT,
    LAYOUT_TEXT_OVER_IMAGE,
    LAYOUT_IMAGE_OVER_TEXT,
    LAYOUT_IMAGE_OVER_IMAGE,
    LAYOUT_EMPTY,
)

# Text rendition: bars of element color, bar height = h_elem / TEXT_BARS
# with equal gaps (3 bars, 2 gaps per box).
TEXT_BARS = 5


def _pixel_span(lo: float, hi: float, n: int) -> tuple[int, int]:
    """Index range [i0, i1) of pixels whose centers fall in [lo, hi)."""
    i0 = int(np.ceil(lo * n - 0.5))
    i1 = int(np.ceil(hi * n - 0.5))
    return max(i0, 0), min(i1, n)


def _elem_span(e: Element, h: int, w: int) -> tuple[int, int, int, int]:
    r = e.rect
    i0, i1 = _pixel_span(r.y0, r.y1, h)
    j0, j1 = _pixel_span(r.x0, r.x1, w)
    return i0, i1, j0, j1


def render_rendition(doc: DesignDocument, h: int, w: int) -> np.ndarray:
    """Paint the design onto a white canvas, back to front.

    Image/svg/background elements are filled rects of their color; text
    elements are horizontal stripe bars.  ``opacity`` alpha-blends the
    element over what is already painted.  Regions outside the canvas
    are clipped away.
    """
    if h < 32 or w < 32:
        raise ValueError(f"raster size {h}x{w} below minimum 32")
    img = np.ones((h, w, 3), dtype=np.float32)
    for e in doc.elements:
        i0, i1, j0, j1 = _elem_span(e, h, w)
        if i0 >= i1 or j0 >= j1:
            continue
        color = np.asarray(e.color, dtype=np.float32) / 255.0
        a = np.float32(e.opacity)
        if e.kind is ElementKind.TEXT:
            # bar index of each covered row, measured from the box top
            yc = (np.arange(i0, i1, dtype=np.float64) + 0.5) / h
            bar_h = e.h / TEXT_BARS
            band = np.floor((yc - (e.cy - e.h / 2.0)) / bar_h).astype(np.int64)
            rows = np.arange(i0, i1)[band % 2 == 0]
            if rows.size:
                img[rows, j0:j1, :] = a * color + (1.0 - a) * img[rows, j0:j1, :]
        else:
            img[i0:i1, j0:j1, :] = a * color + (1.0 - a) * img[i0:i1, j0:j1, :]
    return img


def render_layout(doc: DesignDocument, h: int, w: int) -> np.ndarray:
    """Color-coded layout map of the non-background elements.

    Pixels covered by one element take the Image/Text color; pixels
    covered by two or more take the pairwise overlap color of the two
    topmost covering elements (topmost named first).  Uncovered pixels
    are white.
    """
    if h < 32 or w < 32:
        raise ValueError(f"raster size {h}x{w} below minimum 32")
    # 0 = uncovered, 1 = image-like, 2 = text; elements arrive in ascending z,
    # so "top" is simply the most recent cover.
    top = np.zeros((h, w), dtype=np.uint8)
    second = np.zeros((h, w), dtype=np.uint8)
    for e in doc.elements:
        if e.kind is ElementKind.BACKGROUND:
            continue
        i0, i1, j0, j1 = _elem_span(e, h, w)
        if i0 >= i1 or j0 >= j1:
            continue
        code = 2 if e.kind is ElementKind.TEXT else 1
        second[i0:i1, j0:j1] = top[i0:i1, j0:j1]
        top[i0:i1, j0:j1] = code

    palette = np.ones((3, 3, 3), dtype=np.float32)  # [top, second] -> rgb
    palette[1, 0] = np.asarray(LAYOUT_IMAGE, dtype=np.float32) / 255.0
    palette[2, 0] = np.asarray(LAYOUT_TEXT, dtype=np.float32) / 255.0
    palette[2, 2] = np.asarray(LAYOUT_TEXT_OVER_TEXT, dtype=np.float32) / 255.0
    palette[2, 1] = np.asarray(LAYOUT_TEXT_OVER_IMAGE, dtype=np.float32) / 255.0
    palette[1, 2] = np.asarray(LAYOUT_IMAGE_OVER_TEXT, dtype=np.float32) / 255.0
    palette[1, 1] = np.asarray(LAYOUT_IMAGE_OVER_IMAGE, dtype=np.float32) / 255.0
    return palette[top, second]


def raster_pair(doc: DesignDocument, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """(rendition, layout) at identical resolution."""
    return render_rendition(doc, h, w), render_layout(doc, h, w)


def occlude(
    img: np.ndarray, cx_px: int, cy_px: int, side: int, fill: tuple[float, float, float] | np.ndarray
) -> np.ndarray:
    """Copy of ``img`` with a side x side window centered at (cx, cy) replaced by ``fill``.

    The window is clipped to the image; a window fully outside leaves the
    copy unchanged.
    """
    if side <= 0:
        raise ValueError(f"occlusion side must be positive, got {side}")
    h, w = img.shape[:2]
    out = img.copy()
    y0 = cy_px - side // 2
    x0 = cx_px - side // 2
    ya, yb = max(y0, 0), min(y0 + side, h)
    xa, xb = max(x0, 0), min(x0 + side, w)
    if ya < yb and xa < xb:
        out[ya:yb, xa:xb, :] = np.asarray(fill, dtype=img.dtype)
    return out


def to_bytes_image(img: np.ndarray) -> np.ndarray:
    """Quantize a [0,1] float raster to uint8 (values x255, rounded)."""
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    """Write a (h, w, 3) float raster in [0,1] as an 8-bit PNG."""
    from PIL import Image

    Image.fromarray(to_bytes_image(img), mode="RGB").save(path, format="PNG")
