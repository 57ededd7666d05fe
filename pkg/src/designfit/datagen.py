"""Synthetic design corpus: generation, quality filter, guided perturbations.

Training pairs are built by taking a clean, grid-aligned synthetic design
and surgically damaging its geometry.  The damage catalog has 22 kinds:

* position noise on every element at four strengths,
* targeted moves of the largest / smallest / two largest / two smallest
  elements,
* cluttering everything onto one of five anchor points,
* the scale-based mirror of the noise and targeted variants,
* one combined position+scale noise.

Two further pair constructions exist for evaluation: ``color`` recolors
one member of an overlapping text/shape pair to sit at a CIELAB distance
in (2, 3) from the other (legible but clashing), and ``crossmatch`` pairs
the good version of one design with the damaged version of another.

Everything is parameterized by explicit seeds and is embarrassingly
parallel across documents.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .color import delta_e76, lab_to_srgb, srgb_to_lab
from .document import (
    DesignDocument,
    Element,
    ElementKind,
    read_document,
    write_document,
)


class DatagenError(ValueError):
    pass


class NoOverlapPair(DatagenError):
    """Document has no text element stacked on an image/svg element."""


class Perturbation(Enum):
    """The 22 guided transformations that turn a good design bad."""

    POS_NOISE_005 = "pos-noise-0.05"
    POS_NOISE_01 = "pos-noise-0.1"
    POS_NOISE_02 = "pos-noise-0.2"
    POS_NOISE_05 = "pos-noise-0.5"
    MOVE_LARGEST = "move-largest"
    MOVE_SMALLEST = "move-smallest"
    MOVE_TWO_LARGEST = "move-two-largest"
    MOVE_TWO_SMALLEST = "move-two-smallest"
    CLUTTER_CENTER = "clutter-center"
    CLUTTER_TOP_LEFT = "clutter-top-left"
    CLUTTER_TOP_RIGHT = "clutter-top-right"
    CLUTTER_BOTTOM_LEFT = "clutter-bottom-left"
    CLUTTER_BOTTOM_RIGHT = "clutter-bottom-right"
    SCALE_NOISE_005 = "scale-noise-0.05"
    SCALE_NOISE_01 = "scale-noise-0.1"
    SCALE_NOISE_02 = "scale-noise-0.2"
    SCALE_NOISE_05 = "scale-noise-0.5"
    SCALE_LARGEST = "scale-largest"
    SCALE_SMALLEST = "scale-smallest"
    SCALE_TWO_LARGEST = "scale-two-largest"
    SCALE_TWO_SMALLEST = "scale-two-smallest"
    COMBINED_01 = "combined-0.1"


_POS_SIGMA = {
    Perturbation.POS_NOISE_005: 0.05,
    Perturbation.POS_NOISE_01: 0.1,
    Perturbation.POS_NOISE_02: 0.2,
    Perturbation.POS_NOISE_05: 0.5,
}

_SCALE_SIGMA = {
    Perturbation.SCALE_NOISE_005: 0.05,
    Perturbation.SCALE_NOISE_01: 0.1,
    Perturbation.SCALE_NOISE_02: 0.2,
    Perturbation.SCALE_NOISE_05: 0.5,
}

_CLUTTER_ANCHOR = {
    Perturbation.CLUTTER_CENTER: (0.5, 0.5),
    Perturbation.CLUTTER_TOP_LEFT: (0.0, 0.0),
    Perturbation.CLUTTER_TOP_RIGHT: (1.0, 0.0),
    Perturbation.CLUTTER_BOTTOM_LEFT: (0.0, 1.0),
    Perturbation.CLUTTER_BOTTOM_RIGHT: (1.0, 1.0),
}

_MOVE_KINDS = {
    Perturbation.MOVE_LARGEST: (True, 1),
    Perturbation.MOVE_SMALLEST: (False, 1),
    Perturbation.MOVE_TWO_LARGEST: (True, 2),
    Perturbation.MOVE_TWO_SMALLEST: (False, 2),
}

_SCALE_TARGET_KINDS = {
    Perturbation.SCALE_LARGEST: (True, 1),
    Perturbation.SCALE_SMALLEST: (False, 1),
    Perturbation.SCALE_TWO_LARGEST: (True, 2),
    Perturbation.SCALE_TWO_SMALLEST: (False, 2),
}

#: std-dev for targeted move/scale perturbations (paper gives none)
TARGETED_SIGMA = 0.3
#: jitter around the clutter anchor
CLUTTER_JITTER = 0.02
#: scale factors are floored here so elements never collapse or flip
SCALE_FLOOR = 0.1

COLOR_RECOLOR = "color-recolor"
CROSS_MATCH = "cross-match"

MAX_GOOD_ELEMENTS = 10


@dataclass(frozen=True)
class DesignPair:
    """A (good, bad) training/evaluation pair and what made the bad one bad."""

    good: DesignDocument
    bad: DesignDocument
    perturbation: Perturbation | str


def is_good_design(doc: DesignDocument) -> bool:
    """Quality filter: at most 10 elements and no text sitting on an image.

    Text over an *svg* shape (a banner or badge under a label) is
    ordinary design practice and stays allowed; it is also what the
    color-recolor construction feeds on.
    """
    if len(doc.elements) > MAX_GOOD_ELEMENTS:
        return False
    texts = [e.rect for e in doc.elements if e.kind is ElementKind.TEXT]
    images = [e.rect for e in doc.elements if e.kind is ElementKind.IMAGE]
    for t in texts:
        for im in images:
            if t.intersection_area(im) > 0.0:
                return False
    return True


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

GRID = 12  # layout grid: 12 columns x 12 rows, 1-cell outer margin

_CANVAS_CHOICES = ((640, 640), (640, 800), (800, 640), (512, 768), (768, 512), (720, 720))


def _hsv_bytes(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, min(max(s, 0.0), 1.0), min(max(v, 0.0), 1.0))
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def _free_positions(occ: np.ndarray, wc: int, hc: int) -> list[tuple[int, int]]:
    """Top-left cells (row, col) where a wc x hc block fits inside the margin."""
    spots = []
    for r in range(1, GRID - 1 - hc + 1):
        for c in range(1, GRID - 1 - wc + 1):
            if not occ[r : r + hc, c : c + wc].any():
                spots.append((r, c))
    return spots


def _cells_to_geometry(r: int, c: int, wc: int, hc: int) -> tuple[float, float, float, float]:
    return ((c + wc / 2.0) / GRID, (r + hc / 2.0) / GRID, wc / GRID, hc / GRID)


def _place(
    rng: np.random.Generator,
    occ: np.ndarray,
    wc: int,
    hc: int,
    align_cols: set[int],
) -> tuple[int, int, int, int] | None:
    """Place a block on the grid, preferring spots left-aligned with earlier ones."""
    while wc >= 2 and hc >= 1:
        spots = _free_positions(occ, wc, hc)
        if spots:
            aligned = [s for s in spots if s[1] in align_cols]
            if aligned and rng.random() < 0.6:
                spots = aligned
            r, c = spots[int(rng.integers(len(spots)))]
            occ[r : r + hc, c : c + wc] = True
            return r, c, wc, hc
        # no room at this size: shrink the larger dimension and retry
        if wc >= hc and wc > 2:
            wc -= 1
        elif hc > 1:
            hc -= 1
        else:
            return None
    return None


def _generate_one(rng: np.random.Generator, max_elems: int) -> DesignDocument:
    canvas_w, canvas_h = _CANVAS_CHOICES[int(rng.integers(len(_CANVAS_CHOICES)))]
    budget = max_elems - 1  # background always present
    n_img = int(rng.integers(1, min(3, budget) + 1))
    rest = budget - n_img
    n_text = int(rng.integers(1, min(4, rest) + 1)) if rest >= 1 else 0
    want_banner = n_text >= 1 and (budget - n_img - n_text) >= 1 and rng.random() < 0.4

    base_hue = rng.random()
    bg_color = _hsv_bytes(base_hue, rng.uniform(0.04, 0.15), rng.uniform(0.93, 1.0))

    occ = np.zeros((GRID, GRID), dtype=bool)
    align_cols: set[int] = set()

    images = []
    for _ in range(n_img):
        wc = int(rng.integers(3, 7))
        hc = int(rng.integers(3, 7))
        spot = _place(rng, occ, wc, hc, align_cols)
        if spot is None:
            continue
        align_cols.add(spot[1])
        hue = base_hue + rng.choice([0.0, 0.06, -0.06, 0.5])
        color = _hsv_bytes(hue, rng.uniform(0.35, 0.75), rng.uniform(0.45, 0.85))
        images.append((spot, color))

    texts = []
    for _ in range(n_text):
        wc = int(rng.integers(2, 7))
        hc = int(rng.integers(1, 3))
        spot = _place(rng, occ, wc, hc, align_cols)
        if spot is None:
            continue
        align_cols.add(spot[1])
        color = _hsv_bytes(base_hue, rng.uniform(0.1, 0.5), rng.uniform(0.08, 0.3))
        texts.append((spot, color))

    banner = None
    if want_banner and texts:
        # a shape one cell wider than a text box, sitting right under it
        (r, c, wc, hc), _ = texts[int(rng.integers(len(texts)))]
        br, bc = r, max(c - 1, 0)
        bw = min(wc + 2, GRID - bc)
        banner = (br, bc, bw, hc)
        color = _hsv_bytes(base_hue, rng.uniform(0.1, 0.3), rng.uniform(0.75, 0.9))
        banner = (banner, color)

    elements = [
        Element(
            kind=ElementKind.BACKGROUND,
            cx=0.5,
            cy=0.5,
            w=1.0,
            h=1.0,
            z=0,
            color=bg_color,
            content_tag="bg",
        )
    ]
    z = 1
    for i, (spot, color) in enumerate(images):
        cx, cy, w, h = _cells_to_geometry(*spot)
        elements.append(
            Element(ElementKind.IMAGE, cx, cy, w, h, z, color, f"img{i}")
        )
        z += 1
    if banner is not None:
        spot, color = banner
        cx, cy, w, h = _cells_to_geometry(*spot)
        elements.append(Element(ElementKind.SVG, cx, cy, w, h, z, color, "banner0"))
        z += 1
    for i, (spot, color) in enumerate(texts):
        cx, cy, w, h = _cells_to_geometry(*spot)
        elements.append(Element(ElementKind.TEXT, cx, cy, w, h, z, color, f"txt{i}"))
        z += 1

    return DesignDocument(canvas_w=canvas_w, canvas_h=canvas_h, elements=tuple(elements))


def generate_synthetic(seed: int, n: int, max_elems: int = 8) -> list[DesignDocument]:
    """Generate ``n`` grid-aligned designs that all pass the quality filter."""
    if not 2 <= max_elems <= 10:
        raise DatagenError(f"max_elems must be in [2, 10], got {max_elems}")
    streams = np.random.SeedSequence(seed).spawn(n)
    docs = [_generate_one(np.random.default_rng(s), max_elems) for s in streams]
    return docs


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------


def _rank_targets(doc: DesignDocument, largest: bool, count: int) -> list[int]:
    fg = doc.foreground_indices
    order = sorted(fg, key=lambda i: (-doc.elements[i].area, i) if largest else (doc.elements[i].area, i))
    return order[: min(count, len(order))]


def _apply_geometry(doc: DesignDocument, geo: dict[int, list[float]]) -> DesignDocument:
    updates = {}
    for i, (cx, cy, w, h) in geo.items():
        # clip centers back onto the canvas; rects may still overflow
        cx = min(max(cx, 0.0), 1.0)
        cy = min(max(cy, 0.0), 1.0)
        updates[i] = doc.elements[i].with_geometry(cx, cy, w, h)
    return doc.with_elements(updates)


def _geometry(doc: DesignDocument, indices) -> dict[int, list[float]]:
    return {
        i: [doc.elements[i].cx, doc.elements[i].cy, doc.elements[i].w, doc.elements[i].h]
        for i in indices
    }


def _pos_noise(geo, rng, sigma: float, targets) -> None:
    for i in targets:
        geo[i][0] += rng.normal(0.0, sigma)
        geo[i][1] += rng.normal(0.0, sigma)


def _scale_noise(geo, rng, sigma: float, targets) -> None:
    for i in targets:
        geo[i][2] *= max(SCALE_FLOOR, 1.0 + rng.normal(0.0, sigma))
        geo[i][3] *= max(SCALE_FLOOR, 1.0 + rng.normal(0.0, sigma))


def apply_position_noise(doc: DesignDocument, sigma: float, seed: int, targets=None) -> DesignDocument:
    """Gaussian center noise on the targeted elements (all foreground by default)."""
    targets = doc.foreground_indices if targets is None else tuple(targets)
    geo = _geometry(doc, targets)
    _pos_noise(geo, np.random.default_rng(seed), sigma, targets)
    return _apply_geometry(doc, geo)


def apply_scale_noise(doc: DesignDocument, sigma: float, seed: int, targets=None) -> DesignDocument:
    """Multiplicative size noise, factor max(0.1, 1 + N(0, sigma^2)) per axis."""
    targets = doc.foreground_indices if targets is None else tuple(targets)
    geo = _geometry(doc, targets)
    _scale_noise(geo, np.random.default_rng(seed), sigma, targets)
    return _apply_geometry(doc, geo)


def perturb(doc: DesignDocument, kind: Perturbation, seed: int) -> DesignDocument:
    """Apply one guided transformation; only cx, cy, w, h ever change.

    The background is left untouched.  Centers are clipped back into
    [0, 1] afterwards; the rect may still overflow the canvas, which is
    exactly the badness signal the rasterizer preserves by clipping.
    """
    fg = doc.foreground_indices
    if not fg:
        raise DatagenError("document has only a background, nothing to perturb")
    rng = np.random.default_rng(seed)
    geo = _geometry(doc, fg)

    if kind in _POS_SIGMA:
        _pos_noise(geo, rng, _POS_SIGMA[kind], fg)
    elif kind in _MOVE_KINDS:
        largest, count = _MOVE_KINDS[kind]
        _pos_noise(geo, rng, TARGETED_SIGMA, _rank_targets(doc, largest, count))
    elif kind in _CLUTTER_ANCHOR:
        ax, ay = _CLUTTER_ANCHOR[kind]
        for i in fg:
            geo[i][0] = ax + rng.normal(0.0, CLUTTER_JITTER)
            geo[i][1] = ay + rng.normal(0.0, CLUTTER_JITTER)
    elif kind in _SCALE_SIGMA:
        _scale_noise(geo, rng, _SCALE_SIGMA[kind], fg)
    elif kind in _SCALE_TARGET_KINDS:
        largest, count = _SCALE_TARGET_KINDS[kind]
        _scale_noise(geo, rng, TARGETED_SIGMA, _rank_targets(doc, largest, count))
    elif kind is Perturbation.COMBINED_01:
        _pos_noise(geo, rng, 0.1, fg)
        _scale_noise(geo, rng, 0.1, fg)
    else:  # pragma: no cover - enum is closed
        raise DatagenError(f"unhandled perturbation {kind}")

    return _apply_geometry(doc, geo)


# ---------------------------------------------------------------------------
# color recoloring
# ---------------------------------------------------------------------------


def _overlap_pairs(doc: DesignDocument) -> list[tuple[int, int]]:
    """(text_idx, shape_idx) pairs where the text sits on the shape."""
    pairs = []
    for ti, te in enumerate(doc.elements):
        if te.kind is not ElementKind.TEXT:
            continue
        for gi, ge in enumerate(doc.elements):
            if not ge.kind.is_graphic or ge.z >= te.z:
                continue
            if te.rect.intersection_area(ge.rect) > 0.0:
                pairs.append((ti, gi))
    return pairs


def recolor_bad(doc: DesignDocument, seed: int, attempts: int = 500) -> DesignDocument:
    """Recolor one member of an overlapping text/shape pair to clash subtly.

    The chosen member's new color lands at CIE76 distance in the open
    interval (2, 3) from the other member's color: visibly distinct but
    far too close for a legible, pleasant design.  Everything except
    that single color triple is unchanged.
    """
    pairs = _overlap_pairs(doc)
    if not pairs:
        raise NoOverlapPair("no text element overlaps an image/svg element")
    rng = np.random.default_rng(seed)
    ti, gi = pairs[int(rng.integers(len(pairs)))]
    victim, other = (ti, gi) if rng.random() < 0.5 else (gi, ti)
    anchor = doc.elements[other].color
    anchor_lab = np.asarray(srgb_to_lab(anchor))
    for _ in range(attempts):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        radius = rng.uniform(2.2, 2.8)
        cand = lab_to_srgb(tuple(anchor_lab + radius * direction))
        d = delta_e76(cand, anchor)
        if 2.0 < d < 3.0:
            recolored = doc.elements[victim]
            return doc.with_element(victim, type(recolored)(
                kind=recolored.kind,
                cx=recolored.cx,
                cy=recolored.cy,
                w=recolored.w,
                h=recolored.h,
                z=recolored.z,
                color=cand,
                content_tag=recolored.content_tag,
                opacity=recolored.opacity,
            ))
    raise DatagenError(f"could not find a recoloring near {anchor} after {attempts} attempts")


# ---------------------------------------------------------------------------
# pair building and dataset layout
# ---------------------------------------------------------------------------

SETTINGS = ("biased", "color", "crossmatch")


def build_pairs(docs: list[DesignDocument], setting: str, seed: int) -> list[DesignPair]:
    """Assemble (good, bad) pairs for one evaluation setting.

    ``biased``: each doc gets one uniformly sampled perturbation.
    ``color``: each doc with a text-on-shape overlap gets recolored.
    ``crossmatch``: the good of doc x is paired with the perturbed bad
    of doc y, x != y.
    """
    if setting not in SETTINGS:
        raise DatagenError(f"unknown setting {setting!r}, expected one of {SETTINGS}")
    for d in docs:
        if not is_good_design(d):
            raise DatagenError("build_pairs requires documents passing is_good_design")
    kinds = list(Perturbation)
    ss = np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    child_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(len(docs))]

    if setting == "biased":
        out = []
        for doc, child in zip(docs, child_seeds):
            kind = kinds[int(rng.integers(len(kinds)))]
            out.append(DesignPair(doc, perturb(doc, kind, child), kind))
        return out

    if setting == "color":
        out = []
        for doc, child in zip(docs, child_seeds):
            if not _overlap_pairs(doc):
                continue
            out.append(DesignPair(doc, recolor_bad(doc, child), COLOR_RECOLOR))
        return out

    # crossmatch
    if len(docs) < 2:
        raise DatagenError("crossmatch needs at least 2 documents")
    bads = []
    for doc, child in zip(docs, child_seeds):
        kind = kinds[int(rng.integers(len(kinds)))]
        bads.append(perturb(doc, kind, child))
    out = []
    n = len(docs)
    for i, doc in enumerate(docs):
        j = (i + 1 + int(rng.integers(n - 1))) % n
        out.append(DesignPair(doc, bads[j], CROSS_MATCH))
    return out


def _origin_id(origin: Perturbation | str) -> str:
    return origin.value if isinstance(origin, Perturbation) else origin


def _origin_from_id(text: str) -> Perturbation | str:
    if text in (COLOR_RECOLOR, CROSS_MATCH):
        return text
    return Perturbation(text)


def write_dataset(root, pairs_by_split: dict[str, list[DesignPair]], seed: int) -> None:
    """Materialize pairs as ``<root>/<split>/<id>/{good.doc,bad.doc,meta.txt}``."""
    root = Path(root)
    for split, pairs in pairs_by_split.items():
        for i, pair in enumerate(pairs):
            d = root / split / f"{i:05d}"
            d.mkdir(parents=True, exist_ok=True)
            write_document(pair.good, d / "good.doc")
            write_document(pair.bad, d / "bad.doc")
            meta = (
                f"perturbation = {_origin_id(pair.perturbation)}\n"
                f"seed = {seed}\n"
                f"index = {i}\n"
            )
            (d / "meta.txt").write_text(meta, encoding="utf-8")


def load_dataset(root, split: str) -> list[DesignPair]:
    root = Path(root) / split
    if not root.is_dir():
        raise DatagenError(f"dataset split directory not found: {root}")
    pairs = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        meta = {}
        for line in (d / "meta.txt").read_text(encoding="utf-8").splitlines():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
        pairs.append(
            DesignPair(
                good=read_document(d / "good.doc"),
                bad=read_document(d / "bad.doc"),
                perturbation=_origin_from_id(meta["perturbation"]),
            )
        )
    return pairs
