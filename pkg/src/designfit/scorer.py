"""The design scorer: a small Siamese-trained CNN over paired rasters.

The model eats the rendition and the layout encoding of a design,
concatenated into a 6-channel image, and emits an unbounded scalar
score plus a 64-dim embedding.  Four conv blocks (64 filters, 3x3,
stride 1, same padding -> group norm -> tanh -> 2x2 average pool)
feed a global average pool; the pooled features pass one more tanh to
form the embedding, and a 64 -> 64 -> 32 -> 1 fully connected head maps
the embedding to the score.

Training is Siamese: one parameter set scores both members of a
(good, bad) pair, and the loss combines a ranking hinge on the score
difference with a similarity penalty on the embedding cosine, so good
and bad versions are pushed apart in feature space as well as in score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .datagen import DesignPair, Perturbation
from .document import DesignDocument
from .raster import raster_pair
from .util import parallel_map

EMBED_DIM = 64
CONV_CHANNELS = 64
N_BLOCKS = 4
IN_CHANNELS = 6

#: conv 3520 + 3*36928, norms 4*128, head 4160 + 2080 + 33
EXPECTED_PARAM_COUNT = 121_089

INPUT_MODES = ("both", "rendition", "layout")

DEFAULT_INPUT_SIZE = 256


class ScorerModel:
    """Frozen-architecture scorer with hand-derived backward passes."""

    def __init__(
        self,
        input_size: int = DEFAULT_INPUT_SIZE,
        norm: str = "group",
        input_mode: str = "both",
        seed: int = 0,
        dtype=np.float32,
    ):
        if input_size < 32 or input_size % 16 != 0:
            raise ValueError(f"input_size must be >= 32 and divisible by 16, got {input_size}")
        if input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}, got {input_mode!r}")
        self.input_size = input_size
        self.norm_kind = norm
        self.input_mode = input_mode
        self.dtype = dtype
        rng = np.random.default_rng(seed)

        self.blocks = []
        in_ch = IN_CHANNELS
        for i in range(N_BLOCKS):
            conv = nn.Conv2d(
                in_ch, CONV_CHANNELS, 3, rng=rng, dtype=dtype, name=f"conv{i + 1}", first=(i == 0)
            )
            norm_layer = nn.make_norm(norm, CONV_CHANNELS, dtype=dtype, name=f"norm{i + 1}")
            self.blocks.append((conv, norm_layer, nn.Tanh(), nn.AvgPool2x2()))
            in_ch = CONV_CHANNELS
        self.gap = nn.GlobalAvgPool()
        self.emb_tanh = nn.Tanh()
        self.fc1 = nn.Linear(EMBED_DIM, 64, rng=rng, dtype=dtype, name="fc1")
        self.act1 = nn.Tanh()
        self.fc2 = nn.Linear(64, 32, rng=rng, dtype=dtype, name="fc2")
        self.act2 = nn.Tanh()
        self.fc3 = nn.Linear(32, 1, rng=rng, dtype=dtype, name="fc3")

        count = sum(p.value.size for p in self.params())
        if count != EXPECTED_PARAM_COUNT:
            raise AssertionError(f"parameter count {count} != expected {EXPECTED_PARAM_COUNT}")

        mask = np.ones(IN_CHANNELS, dtype=dtype)
        if input_mode == "rendition":
            mask[3:] = 0.0
        elif input_mode == "layout":
            mask[:3] = 0.0
        self._mask = mask

    # -- parameters and persistence -------------------------------------

    def params(self) -> list[nn.Param]:
        out = []
        for conv, norm_layer, _, _ in self.blocks:
            out.extend(conv.params())
            out.extend(norm_layer.params())
        out.extend(self.fc1.params())
        out.extend(self.fc2.params())
        out.extend(self.fc3.params())
        return out

    def state_tensors(self) -> dict[str, np.ndarray]:
        tensors = {p.name: p.value for p in self.params()}
        for i, (_, norm_layer, _, _) in enumerate(self.blocks):
            if isinstance(norm_layer, nn.BatchNorm2d):
                tensors[f"norm{i + 1}.running_mean"] = norm_layer.running_mean
                tensors[f"norm{i + 1}.running_var"] = norm_layer.running_var
        tensors["config"] = np.array(
            [
                self.input_size,
                nn.NORM_KINDS.index(self.norm_kind),
                INPUT_MODES.index(self.input_mode),
            ],
            dtype=np.float32,
        )
        return tensors

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.state_tensors())

    @classmethod
    def from_checkpoint(cls, path) -> "ScorerModel":
        tensors = nn.load_checkpoint(path)
        if "config" not in tensors or tensors["config"].shape != (3,):
            raise ValueError("checkpoint missing model config record")
        size, norm_id, mode_id = (int(v) for v in tensors["config"])
        model = cls(input_size=size, norm=nn.NORM_KINDS[norm_id], input_mode=INPUT_MODES[mode_id])
        expected = model.state_tensors()
        for name, arr in expected.items():
            if name == "config":
                continue
            if name not in tensors:
                raise ValueError(f"checkpoint missing tensor {name!r}")
            if tensors[name].shape != arr.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {tensors[name].shape}, "
                    f"expected {arr.shape}"
                )
        for p in model.params():
            p.value[...] = tensors[p.name].astype(model.dtype)
        for i, (_, norm_layer, _, _) in enumerate(model.blocks):
            if isinstance(norm_layer, nn.BatchNorm2d):
                norm_layer.running_mean = tensors[f"norm{i + 1}.running_mean"].astype(model.dtype)
                norm_layer.running_var = tensors[f"norm{i + 1}.running_var"].astype(model.dtype)
        return model

    def load_weights(self, other: dict[str, np.ndarray]) -> None:
        for p in self.params():
            p.value[...] = other[p.name]

    def snapshot_weights(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params()}

    # -- forward / backward ----------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(N, 6, H, W) -> scores (N,), embeddings (N, 64)."""
        for conv, norm_layer, act, pool in self.blocks:
            x = pool.forward(act.forward(norm_layer.forward(conv.forward(x, train), train), train), train)
        z = self.gap.forward(x, train)
        e = self.emb_tanh.forward(z, train)
        h = self.act1.forward(self.fc1.forward(e, train), train)
        h = self.act2.forward(self.fc2.forward(h, train), train)
        s = self.fc3.forward(h, train)[:, 0]
        return s, e

    def backward(self, dscores: np.ndarray, demb: np.ndarray | None = None) -> None:
        dh = self.fc3.backward(dscores[:, None].astype(self.dtype))
        dh = self.fc2.backward(self.act2.backward(dh))
        de = self.fc1.backward(self.act1.backward(dh))
        if demb is not None:
            de = de + demb.astype(self.dtype)
        dz = self.emb_tanh.backward(de)
        dx = self.gap.backward(dz)
        for conv, norm_layer, act, pool in reversed(self.blocks):
            dx = conv.backward(norm_layer.backward(act.backward(pool.backward(dx))))

    # -- document scoring --------------------------------------------------

    def prepare_input(self, doc: DesignDocument) -> np.ndarray:
        """Raster a document into the 6-channel model input (mask applied)."""
        s = self.input_size
        rendition, layout = raster_pair(doc, s, s)
        x = np.concatenate(
            [rendition.transpose(2, 0, 1), layout.transpose(2, 0, 1)], axis=0
        ).astype(self.dtype)
        return x * self._mask[:, None, None]

    def score_input(self, x: np.ndarray) -> float:
        s, _ = self.forward(x[None], train=False)
        return float(s[0])

    def score_doc(self, doc: DesignDocument) -> float:
        return self.score_input(self.prepare_input(doc))

    def score_and_embed(self, doc: DesignDocument) -> tuple[float, np.ndarray]:
        s, e = self.forward(self.prepare_input(doc)[None], train=False)
        return float(s[0]), e[0]

    def score_docs(self, docs, jobs: int = 1) -> np.ndarray:
        return np.array(parallel_map(self.score_doc, docs, jobs))


def score(model: ScorerModel, doc: DesignDocument) -> float:
    """Scalar goodness of a design under the model (deterministic)."""
    return model.score_doc(doc)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

MARGIN_MODES = ("hard", "transform", "adaptive")
SIM_MODES = ("deviance", "exponential", "square")


def _default_tb_margins() -> dict[Perturbation, float]:
    # low noise -> small margin, gross damage -> large, per tier
    low, mid, high = 0.2, 0.4, 0.6
    table = {
        Perturbation.POS_NOISE_005: low,
        Perturbation.POS_NOISE_01: mid,
        Perturbation.POS_NOISE_02: high,
        Perturbation.POS_NOISE_05: high,
        Perturbation.SCALE_NOISE_005: low,
        Perturbation.SCALE_NOISE_01: mid,
        Perturbation.SCALE_NOISE_02: high,
        Perturbation.SCALE_NOISE_05: high,
        Perturbation.COMBINED_01: mid,
    }
    for kind in Perturbation:
        if kind not in table:
            # targeted moves/scales touch few elements; clutter wrecks all
            table[kind] = high if "clutter" in kind.value else mid
    return table


@dataclass
class LossConfig:
    """Weights and variants of the combined ranking + similarity loss."""

    alpha: float = 0.8
    beta: float = 0.2
    margin_mode: str = "hard"
    margin: float = 0.2
    tb_margins: dict = field(default_factory=_default_tb_margins)
    ada_lambda: float = 0.05
    ada_floor: float = 0.1
    sim_mode: str = "deviance"
    eps: float = 1e-8

    def __post_init__(self):
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.margin_mode not in MARGIN_MODES:
            raise ValueError(f"margin_mode must be one of {MARGIN_MODES}")
        if self.sim_mode not in SIM_MODES:
            raise ValueError(f"sim_mode must be one of {SIM_MODES}")

    def resolve_margin(self, kind) -> float:
        if self.margin_mode == "transform" and isinstance(kind, Perturbation):
            return self.tb_margins[kind]
        return self.margin


def p_sim(e_good: np.ndarray, e_bad: np.ndarray, eps: float = 1e-8) -> float:
    """Cosine of the two embeddings with an ``eps`` floor on the denominator."""
    denom = max(float(np.linalg.norm(e_good) * np.linalg.norm(e_bad)), eps)
    return float(np.dot(e_good, e_bad)) / denom


def sim_loss(p: float, mode: str = "deviance") -> float:
    if mode == "deviance":
        return float(np.log1p(np.exp(2.0 * p)))
    if mode == "exponential":
        return float(np.exp(p))
    if mode == "square":
        return (p + 1.0) ** 2
    raise ValueError(f"unknown sim_mode {mode!r}")


def _sim_loss_grad(p: float, mode: str) -> float:
    if mode == "deviance":
        return 2.0 / (1.0 + np.exp(-2.0 * p))
    if mode == "exponential":
        return float(np.exp(p))
    if mode == "square":
        return 2.0 * (p + 1.0)
    raise ValueError(f"unknown sim_mode {mode!r}")


def adaptive_margin(emb_pairs: list[tuple[np.ndarray, np.ndarray]], cfg: LossConfig) -> float:
    """max over the batch of lambda * ||e_good - e_bad||, floored."""
    worst = max(float(np.linalg.norm(eg.astype(np.float64) - eb)) for eg, eb in emb_pairs)
    return max(cfg.ada_lambda * worst, cfg.ada_floor)


def pair_loss(
    s_g: float,
    s_b: float,
    e_g: np.ndarray,
    e_b: np.ndarray,
    cfg: LossConfig,
    kind=None,
    margin: float | None = None,
):
    """Loss of one pair and its gradients w.r.t. both scores and embeddings.

    Returns ``(loss, ds_g, ds_b, de_g, de_b)``.  The adaptive margin, if
    used, is resolved by the caller and passed in as a constant; no
    gradient flows through it.
    """
    e_g = e_g.astype(np.float64)
    e_b = e_b.astype(np.float64)
    m = cfg.resolve_margin(kind) if margin is None else margin

    gap = m - (s_g - s_b)
    hinge = max(0.0, gap)
    ds_g = -cfg.alpha if gap > 0 else 0.0
    ds_b = cfg.alpha if gap > 0 else 0.0

    ng = float(np.linalg.norm(e_g))
    nb = float(np.linalg.norm(e_b))
    denom = ng * nb
    if denom > cfg.eps:
        p = float(np.dot(e_g, e_b)) / denom
        dp_dg = e_b / denom - p * e_g / (ng * ng)
        dp_db = e_g / denom - p * e_b / (nb * nb)
    else:
        p = float(np.dot(e_g, e_b)) / cfg.eps
        dp_dg = e_b / cfg.eps
        dp_db = e_g / cfg.eps

    ls = sim_loss(p, cfg.sim_mode)
    gp = cfg.beta * _sim_loss_grad(p, cfg.sim_mode)
    loss = cfg.alpha * hinge + cfg.beta * ls
    return loss, ds_g, ds_b, gp * dp_dg, gp * dp_db


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 8
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.99
    weight_decay: float = 0.005
    lr_halve_every: int = 5
    loss: LossConfig = field(default_factory=LossConfig)


@dataclass
class TrainReport:
    train_loss: list[float]
    val_racc: list[float]
    best_epoch: int
    best_val_racc: float


def train(
    model: ScorerModel,
    pairs_train: list[DesignPair],
    pairs_val: list[DesignPair],
    epochs: int,
    seed: int,
    cfg: TrainConfig | None = None,
    jobs: int = 1,
    log=None,
) -> TrainReport:
    """Siamese training loop; leaves ``model`` at the best-validation weights.

    One shared parameter set runs forward on both pair members (stacked
    as a 2-image batch so the caches line up for the joint backward).
    Adam uses the configured schedule: the learning rate halves every
    ``lr_halve_every`` epochs.
    """
    if not pairs_train or not pairs_val:
        raise ValueError("training and validation splits must be non-empty")
    cfg = cfg or TrainConfig()
    opt = nn.OptimState(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay
    )
    rng = np.random.default_rng(seed)
    params = model.params()
    losses: list[float] = []
    raccs: list[float] = []
    best_epoch, best_val, best_weights = -1, -math.inf, None

    for epoch in range(epochs):
        opt.lr = nn.halved_lr(cfg.lr, epoch, cfg.lr_halve_every)
        order = rng.permutation(len(pairs_train))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            batch = [pairs_train[i] for i in chunk]
            inputs = [
                np.stack([model.prepare_input(p.good), model.prepare_input(p.bad)])
                for p in batch
            ]
            margin = None
            if cfg.loss.margin_mode == "adaptive":
                embs = []
                for x in inputs:
                    _, e = model.forward(x, train=False)
                    embs.append((e[0], e[1]))
                margin = adaptive_margin(embs, cfg.loss)
            scale = 1.0 / len(batch)
            for pair, x in zip(batch, inputs):
                s, e = model.forward(x, train=True)
                loss, ds_g, ds_b, de_g, de_b = pair_loss(
                    float(s[0]), float(s[1]), e[0], e[1], cfg.loss,
                    kind=pair.perturbation, margin=margin,
                )
                model.backward(
                    np.array([ds_g, ds_b]) * scale,
                    np.stack([de_g, de_b]) * scale,
                )
                total += loss
            nn.adam_step(params, opt)
        losses.append(total / len(order))
        val = rank_accuracy(model, pairs_val, jobs=jobs)
        raccs.append(val)
        if val > best_val:
            best_epoch, best_val = epoch, val
            best_weights = model.snapshot_weights()
        if log is not None:
            log(f"epoch {epoch}: loss {losses[-1]:.4f}  val-racc {val:.4f}  lr {opt.lr:.2e}")

    if best_weights is not None:
        model.load_weights(best_weights)
    return TrainReport(losses, raccs, best_epoch, best_val)


def rank_accuracy(model: ScorerModel, pairs: list[DesignPair], jobs: int = 1) -> float:
    """Fraction of pairs where the good design strictly outscores the bad."""
    if not pairs:
        raise ValueError("rank_accuracy needs at least one pair")

    def one(pair: DesignPair) -> bool:
        return model.score_doc(pair.good) > model.score_doc(pair.bad)

    wins = parallel_map(one, pairs, jobs)
    return sum(wins) / len(wins)


# ---------------------------------------------------------------------------
# occlusion sensitivity
# ---------------------------------------------------------------------------


def sensitivity_grid(
    model: ScorerModel,
    doc: DesignDocument,
    window: int = 60,
    stride: int = 10,
    jobs: int = 1,
) -> np.ndarray:
    """Score deltas on the occlusion-center grid, shape (ceil(S/stride),)*2.

    Each grid cell slides a window x window patch over the *rendition*,
    fills it with the rendition's per-channel mean pixel value, re-scores
    (layout channels untouched) and records new_score - old_score.
    """
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    s = model.input_size
    x0 = model.prepare_input(doc)
    s0 = model.score_input(x0)
    fill = x0[:3].mean(axis=(1, 2))
    centers = [i * stride + stride // 2 for i in range(math.ceil(s / stride))]

    def one(cell: tuple[int, int]) -> float:
        cy, cx = cell
        x = x0.copy()
        y0, x0_ = cy - window // 2, cx - window // 2
        ya, yb = max(y0, 0), min(y0 + window, s)
        xa, xb = max(x0_, 0), min(x0_ + window, s)
        if ya < yb and xa < xb:
            x[:3, ya:yb, xa:xb] = fill[:, None, None]
        return model.score_input(x) - s0

    cells = [(cy, cx) for cy in centers for cx in centers]
    values = parallel_map(one, cells, jobs)
    return np.array(values, dtype=np.float64).reshape(len(centers), len(centers))


def sensitivity_map(
    model: ScorerModel,
    doc: DesignDocument,
    window: int = 60,
    stride: int = 10,
    jobs: int = 1,
) -> np.ndarray:
    """Full-resolution sensitivity heat map (bilinear upsample of the grid)."""
    grid = sensitivity_grid(model, doc, window=window, stride=stride, jobs=jobs)
    s = model.input_size
    anchors = np.array([i * stride + stride // 2 for i in range(grid.shape[0])], dtype=np.float64)
    coords = np.arange(s, dtype=np.float64)
    rows = np.empty((s, grid.shape[1]))
    for j in range(grid.shape[1]):
        rows[:, j] = np.interp(coords, anchors, grid[:, j])
    full = np.empty((s, s))
    for i in range(s):
        full[i] = np.interp(coords, anchors, rows[i])
    return full


def heat_colormap(heat: np.ndarray) -> np.ndarray:
    """Signed diverging colormap: negative blue, positive red, zero white."""
    vmax = float(np.abs(heat).max())
    rgb = np.ones(heat.shape + (3,), dtype=np.float32)
    if vmax == 0.0:
        return rgb
    v = (heat / vmax).astype(np.float32)
    pos = np.clip(v, 0.0, 1.0)
    neg = np.clip(-v, 0.0, 1.0)
    rgb[..., 0] -= neg  # red channel drops where negative
    rgb[..., 1] -= pos + neg
    rgb[..., 2] -= pos  # blue channel drops where positive
    return np.clip(rgb, 0.0, 1.0)
