"""sRGB <-> CIELAB conversion and color difference (CIE76).

Standard pipeline: 8-bit sRGB -> linear RGB (IEC 61966-2-1 transfer
curve) -> XYZ (D65, 2 degree observer) -> L*a*b*.  Reference white
D65, so (255, 255, 255) maps to exactly L=100, a=0, b=0.
"""

from __future__ import annotations

import math

# sRGB -> XYZ matrix rows (D65), applied to linear RGB scaled to [0, 100]
_M = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)

_WHITE = (95.047, 100.0, 108.883)

_LAB_DELTA = 6.0 / 29.0


def _srgb_to_linear(c: float) -> float:
    c = c / 255.0
    if c > 0.04045:
        return ((c + 0.055) / 1.055) ** 2.4
    return c / 12.92


def _lab_f(t: float) -> float:
    if t > _LAB_DELTA**3:
        return t ** (1.0 / 3.0)
    return t / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0


def srgb_to_lab(rgb: tuple[int, int, int]) -> tuple[float, float, float]:
    lin = [_srgb_to_linear(c) * 100.0 for c in rgb]
    x, y, z = (sum(m * v for m, v in zip(row, lin)) for row in _M)
    fx = _lab_f(x / _WHITE[0])
    fy = _lab_f(y / _WHITE[1])
    fz = _lab_f(z / _WHITE[2])
    return (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))


def delta_e76(rgb_a: tuple[int, int, int], rgb_b: tuple[int, int, int]) -> float:
    """CIE76 color difference: Euclidean distance in L*a*b*."""
    la = srgb_to_lab(rgb_a)
    lb = srgb_to_lab(rgb_b)
    return math.sqrt(sum((p - q) ** 2 for p, q in zip(la, lb)))


def _linear_to_srgb(c: float) -> float:
    if c > 0.0031308:
        return 1.055 * c ** (1.0 / 2.4) - 0.055
    return 12.92 * c


_M_INV = (
    (3.2404542, -1.5371385, -0.4985314),
    (-0.9692660, 1.8760108, 0.0415560),
    (0.0556434, -0.2040259, 1.0572252),
)


def _lab_f_inv(t: float) -> float:
    if t > _LAB_DELTA:
        return t**3
    return 3.0 * _LAB_DELTA**2 * (t - 4.0 / 29.0)


def lab_to_srgb(lab: tuple[float, float, float]) -> tuple[int, int, int]:
    """Inverse conversion, clipped to the sRGB gamut and quantized to bytes."""
    l, a, b = lab
    fy = (l + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = (
        _lab_f_inv(fx) * _WHITE[0],
        _lab_f_inv(fy) * _WHITE[1],
        _lab_f_inv(fz) * _WHITE[2],
    )
    out = []
    for row in _M_INV:
        lin = sum(m * v for m, v in zip(row, xyz)) / 100.0
        lin = min(max(lin, 0.0), 1.0)
        out.append(int(round(_linear_to_srgb(lin) * 255.0)))
    return (min(max(out[0], 0), 255), min(max(out[1], 0), 255), min(max(out[2], 0), 255))
