"""Built-in verification suite behind ``designfit selfcheck``.

Every layer's analytic backward pass is compared against central finite
differences in float64, the combined loss is probed end to end through
a small scorer, and a few closed-form and oracle equivalences are
re-derived on the spot.  Exit status reflects the worst outcome, so the
command doubles as an install smoke test.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from .document import DesignDocument, Element, ElementKind, rect_iou
from .refiner import Chromosome, snap_crossover
from .scorer import LossConfig, ScorerModel, pair_loss, sim_loss

FD_TOL_LAYER = 1e-4
FD_TOL_END2END = 1e-3


def _fd_layer(layer, x: np.ndarray, rng: np.random.Generator) -> float:
    """Worst relative FD error over the layer's params and its input."""
    direction = rng.normal(size=layer.forward(x, train=False).shape)

    def loss() -> float:
        return float((layer.forward(x, train=False) * direction).sum())

    for p in layer.params():
        p.grad[...] = 0.0
    out = layer.forward(x, train=True)
    dx = layer.backward(direction)
    worst = 0.0
    for p in layer.params():
        worst = max(worst, nn.fd_check_param(loss, p, rng=rng))
    if dx is not None:
        worst = max(worst, nn.fd_check(loss, x, np.asarray(dx), rng=rng))
    return worst


def check_layer_gradients(seed: int = 0) -> list[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    x_img = rng.normal(size=(2, 6, 8, 8))
    cases = [
        ("conv2d", nn.Conv2d(6, 4, 3, rng=rng, dtype=np.float64), x_img),
        ("groupnorm", nn.GroupNorm(6, groups=2, dtype=np.float64), x_img),
        ("batchnorm", nn.BatchNorm2d(6, dtype=np.float64), x_img),
        ("layernorm", nn.GroupNorm(6, groups=1, dtype=np.float64), x_img),
        ("instancenorm", nn.GroupNorm(6, groups=6, dtype=np.float64), x_img),
        ("tanh", nn.Tanh(), x_img),
        ("avgpool2x2", nn.AvgPool2x2(), x_img),
        ("global_avgpool", nn.GlobalAvgPool(), x_img),
        ("linear", nn.Linear(12, 5, rng=rng, dtype=np.float64), rng.normal(size=(3, 12))),
    ]
    return [(name, _fd_layer(layer, x.copy(), rng)) for name, layer, x in cases]


def check_end_to_end(seed: int = 0, coords_per_param: int = 2) -> float:
    """FD check of the full pair loss through a float64 scorer at 32x32."""
    rng = np.random.default_rng(seed)
    model = ScorerModel(input_size=32, seed=seed, dtype=np.float64)
    x = rng.uniform(0.0, 1.0, size=(2, 6, 32, 32))
    cfg = LossConfig()

    def loss() -> float:
        s, e = model.forward(x, train=False)
        value, *_ = pair_loss(float(s[0]), float(s[1]), e[0], e[1], cfg)
        return value

    for p in model.params():
        p.grad[...] = 0.0
    s, e = model.forward(x, train=True)
    value, ds_g, ds_b, de_g, de_b = pair_loss(float(s[0]), float(s[1]), e[0], e[1], cfg)
    model.backward(np.array([ds_g, ds_b]), np.stack([de_g, de_b]))
    worst = 0.0
    for p in model.params():
        worst = max(worst, nn.fd_check_param(loss, p, rng=rng, max_coords=coords_per_param))
    return worst


def check_loss_closed_forms() -> float:
    worst = abs(sim_loss(0.0) - math.log(2.0))
    worst = max(worst, abs(sim_loss(1.0) - math.log(math.exp(2.0) + 1.0)))
    worst = max(worst, abs(sim_loss(-1.0) - math.log(math.exp(-2.0) + 1.0)))
    # hinge exactly zero at the margin boundary
    cfg = LossConfig(beta=0.0, alpha=1.0)
    value, *_ = pair_loss(cfg.margin, 0.0, np.ones(4), np.ones(4), cfg)
    worst = max(worst, abs(value))
    return worst


def _pixel_iou(a, b, res: int = 400) -> float:
    centers = (np.arange(res) + 0.5) / res
    xs = centers[None, :]
    ys = centers[:, None]
    in_a = (xs >= a.x0) & (xs < a.x1) & (ys >= a.y0) & (ys < a.y1)
    in_b = (xs >= b.x0) & (xs < b.x1) & (ys >= b.y0) & (ys < b.y1)
    union = np.logical_or(in_a, in_b).sum()
    if union == 0:
        return 0.0
    return np.logical_and(in_a, in_b).sum() / union


def check_iou_oracle(seed: int = 0, cases: int = 5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        pts = rng.uniform(0, 1, size=(2, 4))
        a = _rect_from(pts[0])
        b = _rect_from(pts[1])
        worst = max(worst, abs(rect_iou(a, b) - _pixel_iou(a, b)))
    return worst


def _rect_from(p):
    from .document import Rect

    return Rect(min(p[0], p[1]), min(p[2], p[3]), max(p[0], p[1]), max(p[2], p[3]))


def check_snap_centering() -> float:
    """Crossover of a lone image against an empty canvas centers it."""
    elem = Element(ElementKind.IMAGE, 0.2, 0.3, 0.4, 0.3, z=0, color=(10, 20, 30), content_tag="img0")
    doc = DesignDocument(canvas_w=64, canvas_h=64, elements=(elem,))
    p1 = Chromosome.from_document(doc, (0,))
    p2 = Chromosome.from_document(doc, (0,))
    child = snap_crossover(p1, p2, p=1.0, seed=0)
    got = child.to_document().elements[0]
    return max(abs(got.cx - 0.5), abs(got.cy - 0.5), abs(got.w - 0.4), abs(got.h - 0.3))


def check_checkpoint_roundtrip(tmpdir) -> float:
    import os

    model = ScorerModel(input_size=32, seed=3)
    path = os.path.join(tmpdir, "ck.bin")
    model.save(path)
    clone = ScorerModel.from_checkpoint(path)
    worst = 0.0
    a = {p.name: p.value for p in model.params()}
    b = {p.name: p.value for p in clone.params()}
    for name in a:
        worst = max(worst, float(np.abs(a[name] - b[name]).max()))
    return worst


def check_adam_single_step() -> float:
    p = nn.Param("w", np.array([1.0], dtype=np.float64))
    p.grad[...] = 1.0
    opt = nn.OptimState(lr=0.01, beta1=0.5, beta2=0.99, weight_decay=0.0)
    nn.adam_step([p], opt)
    # constant unit gradient: bias-corrected step is exactly -lr/(1+eps)
    expected = 1.0 - 0.01 / (1.0 + opt.eps)
    return abs(float(p.value[0]) - expected)


def run_selfcheck(tmpdir, emit=print) -> bool:
    """Run every check, emit one line each; True when all pass."""
    results: list[tuple[str, float, float]] = []
    for name, err in check_layer_gradients():
        results.append((f"grad/{name}", err, FD_TOL_LAYER))
    results.append(("grad/scorer-loss-end2end", check_end_to_end(), FD_TOL_END2END))
    results.append(("loss/closed-forms", check_loss_closed_forms(), 1e-6))
    results.append(("metrics/iou-pixel-oracle", check_iou_oracle(), 2e-3))
    results.append(("refiner/snap-centering", check_snap_centering(), 1e-12))
    results.append(("nn/checkpoint-roundtrip", check_checkpoint_roundtrip(tmpdir), 1e-6))
    results.append(("nn/adam-single-step", check_adam_single_step(), 1e-9))
    ok = True
    for name, err, tol in results:
        passed = err < tol
        ok &= passed
        emit(f"{'ok  ' if passed else 'FAIL'} {name}: err {err:.3e} (tol {tol:.0e})")
    return ok
