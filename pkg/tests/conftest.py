import numpy as np
import pytest

from designfit.document import DesignDocument, Element, ElementKind, Rect


def pixel_iou(a: Rect, b: Rect, res: int = 1000) -> float:
    """Independent IoU oracle: count pixel centers inside each rect."""
    centers = (np.arange(res) + 0.5) / res
    xs = centers[None, :]
    ys = centers[:, None]
    in_a = (xs >= a.x0) & (xs < a.x1) & (ys >= a.y0) & (ys < a.y1)
    in_b = (xs >= b.x0) & (xs < b.x1) & (ys >= b.y0) & (ys < b.y1)
    union = int(np.logical_or(in_a, in_b).sum())
    if union == 0:
        return 0.0
    return int(np.logical_and(in_a, in_b).sum()) / union


def random_rect(rng: np.random.Generator) -> Rect:
    p = rng.uniform(0.0, 1.0, 4)
    return Rect(min(p[0], p[1]), min(p[2], p[3]), max(p[0], p[1]), max(p[2], p[3]))


def make_element(kind=ElementKind.IMAGE, cx=0.5, cy=0.5, w=0.2, h=0.2, z=0,
                 color=(120, 30, 60), tag="e", opacity=1.0) -> Element:
    return Element(kind, cx, cy, w, h, z, color, tag, opacity)


def make_doc(*elements, canvas=(640, 640)) -> DesignDocument:
    return DesignDocument(canvas_w=canvas[0], canvas_h=canvas[1], elements=tuple(elements))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
