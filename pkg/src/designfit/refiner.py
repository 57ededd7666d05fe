"""Genetic refinement of element positions and scales.

A single-objective elitist GA searches over the actionable attributes
(center x, center y, width, height) of the refinable elements, with the
scorer as fitness.  The crossover is design-specific: child elements
inherited from the second parent are not copied blindly but *snapped*
into the composition built so far — image-like elements into the best
empty slot of a grid extended from existing element edges, text
elements onto the nearest element's center axis.  Mutation is
canvas-aware: a mutated element is kept only if its rect still lies
inside the canvas, which skips the degenerate half-off-canvas states a
plain Gaussian mutation keeps producing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .document import DesignDocument, Element, ElementKind

log = logging.getLogger(__name__)


class RefinerError(ValueError):
    pass


#: a slot is considered free when every existing element covers less than
#: this fraction of the slot's area
SLOT_OVERLAP_LIMIT = 0.05
#: slot cost = |log(area ratio)| + this weight * center distance
SLOT_DISTANCE_WEIGHT = 2.0
#: random-initialization bounds for element sizes
INIT_SIZE_LO = 0.05
INIT_SIZE_HI = 0.9


@dataclass
class GaConfig:
    population_size: int = 100
    n_trials: int = 1500
    p: float = 0.3
    mutation_sigma: float = 0.05
    mutation_rate: float = 0.2
    elitism: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise RefinerError("population_size must be at least 2")
        if not 0.0 < self.p < 1.0:
            raise RefinerError("p must lie strictly between 0 and 1")
        if self.n_trials < self.population_size:
            raise RefinerError("evaluation budget must cover the initial population")
        if not 0.0 < self.elitism <= 1.0:
            raise RefinerError("elitism fraction must be in (0, 1]")


@dataclass
class Chromosome:
    """Genes (cx, cy, w, h) per refinable element over a shared base document."""

    base: DesignDocument
    refinable: tuple[int, ...]
    genes: np.ndarray  # (len(refinable), 4) float64
    aspect_locked: bool = False
    fitness: float | None = None

    @classmethod
    def from_document(
        cls, doc: DesignDocument, refinable, aspect_locked: bool = False
    ) -> "Chromosome":
        refinable = tuple(sorted(refinable))
        for i in refinable:
            if not 0 <= i < len(doc.elements):
                raise RefinerError(f"refinable index {i} out of range")
            if doc.elements[i].kind is ElementKind.BACKGROUND:
                raise RefinerError("the background is not refinable")
        genes = np.array(
            [[doc.elements[i].cx, doc.elements[i].cy, doc.elements[i].w, doc.elements[i].h] for i in refinable],
            dtype=np.float64,
        ).reshape(len(refinable), 4)
        return cls(doc, refinable, genes, aspect_locked)

    def element(self, pos: int) -> Element:
        idx = self.refinable[pos]
        cx, cy, w, h = self.genes[pos]
        return self.base.elements[idx].with_geometry(cx, cy, w, h)

    def to_document(self) -> DesignDocument:
        return self.base.with_elements(
            {idx: self.element(pos) for pos, idx in enumerate(self.refinable)}
        )

    def with_genes(self, genes: np.ndarray) -> "Chromosome":
        return Chromosome(self.base, self.refinable, genes, self.aspect_locked, fitness=None)

    def key(self) -> bytes:
        return self.genes.tobytes()


# ---------------------------------------------------------------------------
# smart snapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSlots:
    """Grid lines from element edges plus canvas borders, and every rect
    formed by a pair of vertical x a pair of horizontal lines."""

    vlines: np.ndarray
    hlines: np.ndarray
    x0: np.ndarray
    y0: np.ndarray
    x1: np.ndarray
    y1: np.ndarray


def build_grid(canvas_elems: list[Element]) -> GridSlots:
    vx = [0.0, 1.0]
    hy = [0.0, 1.0]
    for e in canvas_elems:
        r = e.rect
        vx.extend((min(max(r.x0, 0.0), 1.0), min(max(r.x1, 0.0), 1.0)))
        hy.extend((min(max(r.y0, 0.0), 1.0), min(max(r.y1, 0.0), 1.0)))
    vlines = np.unique(np.asarray(vx, dtype=np.float64))
    hlines = np.unique(np.asarray(hy, dtype=np.float64))
    ia, ib = np.triu_indices(len(vlines), k=1)
    ja, jb = np.triu_indices(len(hlines), k=1)
    # cross product of x-spans and y-spans
    x0 = np.repeat(vlines[ia], len(ja))
    x1 = np.repeat(vlines[ib], len(ja))
    y0 = np.tile(hlines[ja], len(ia))
    y1 = np.tile(hlines[jb], len(ia))
    return GridSlots(vlines, hlines, x0, y0, x1, y1)


def grid_snap(elem: Element, canvas_elems: list[Element], grid: GridSlots) -> Element:
    """Snap an image-like element into the best free grid slot.

    Candidate slots overlap every existing element by less than 5% of
    their own area.  The winner minimizes |log(slot area / element
    area)| + 2 * center distance (ties: smaller distance, then
    lexicographic slot coordinates).  The element is centered in the
    slot and shrunk uniformly if it does not fit; it is never enlarged.
    If no slot qualifies the element is returned unchanged.
    """
    areas = (grid.x1 - grid.x0) * (grid.y1 - grid.y0)
    ok = np.ones(len(areas), dtype=bool)
    for ce in canvas_elems:
        r = ce.rect
        iw = np.clip(np.minimum(grid.x1, r.x1) - np.maximum(grid.x0, r.x0), 0.0, None)
        ih = np.clip(np.minimum(grid.y1, r.y1) - np.maximum(grid.y0, r.y0), 0.0, None)
        ok &= iw * ih < SLOT_OVERLAP_LIMIT * areas
    if not ok.any():
        log.debug("grid_snap: no free slot for %s, keeping original genes", elem.content_tag)
        return elem
    x0, y0, x1, y1 = grid.x0[ok], grid.y0[ok], grid.x1[ok], grid.y1[ok]
    slot_area = areas[ok]
    scx = 0.5 * (x0 + x1)
    scy = 0.5 * (y0 + y1)
    dist = np.sqrt((scx - elem.cx) ** 2 + (scy - elem.cy) ** 2)
    cost = np.abs(np.log(slot_area / elem.area)) + SLOT_DISTANCE_WEIGHT * dist
    order = np.lexsort((y1, x1, y0, x0, dist, cost))
    best = order[0]
    w, h = elem.w, elem.h
    sw, sh = x1[best] - x0[best], y1[best] - y0[best]
    if w > sw or h > sh:
        s = min(sw / w, sh / h)
        w, h = w * s, h * s
    return elem.with_geometry(float(scx[best]), float(scy[best]), w, h)


def text_align(elem: Element, canvas_elems: list[Element]) -> Element:
    """Align a text element to the nearest canvas element's center axis.

    Whichever of x-aligning or y-aligning moves the text less wins
    (ties: x-align); the other coordinate and the size are untouched.
    """
    if not canvas_elems:
        return elem
    dists = [math.hypot(ce.cx - elem.cx, ce.cy - elem.cy) for ce in canvas_elems]
    nearest = canvas_elems[dists.index(min(dists))]
    cost_x = abs(elem.cx - nearest.cx)
    cost_y = abs(elem.cy - nearest.cy)
    if cost_x <= cost_y:
        return elem.with_geometry(nearest.cx, elem.cy, elem.w, elem.h)
    return elem.with_geometry(elem.cx, nearest.cy, elem.w, elem.h)


def snap_crossover(p1: Chromosome, p2: Chromosome, p: float, seed: int) -> Chromosome:
    """Design-specific crossover with smart snapping.

    A random mask sends each refinable element to parent 1 (prob 1-p) or
    parent 2 (prob p).  Parent-1 elements (plus the document's fixed
    foreground elements) seed the canvas; parent-2 elements are inserted
    one at a time in z order, snapping images into grid slots and
    aligning texts, each insertion extending the canvas for the next.
    """
    if p1.base is not p2.base and p1.base != p2.base:
        raise RefinerError("crossover parents must share a base document")
    if p1.refinable != p2.refinable:
        raise RefinerError("crossover parents must share the refinable set")
    k = len(p1.refinable)
    if k == 0:
        return p1.with_genes(p1.genes.copy())
    rng = np.random.default_rng(seed)
    take2 = rng.random(k) < p

    refinable_set = set(p1.refinable)
    canvas: list[Element] = []
    # elements arrive in ascending z; backgrounds never join the canvas
    # (they span it, so no slot would ever qualify as free)
    for idx, e in enumerate(p1.base.elements):
        if e.kind is ElementKind.BACKGROUND:
            continue
        if idx not in refinable_set:
            canvas.append(e)
        else:
            pos = p1.refinable.index(idx)
            if not take2[pos]:
                canvas.append(p1.element(pos))

    child = p1.genes.copy()
    for pos, idx in enumerate(p1.refinable):
        if not take2[pos]:
            continue
        elem = p2.element(pos)
        if elem.kind.is_graphic:
            elem = grid_snap(elem, canvas, build_grid(canvas))
        else:
            elem = text_align(elem, canvas)
        canvas.append(elem)
        child[pos] = (elem.cx, elem.cy, elem.w, elem.h)
    return p1.with_genes(child)


def mutate(c: Chromosome, cfg: GaConfig, seed: int) -> Chromosome:
    """Per-gene Gaussian mutation with canvas containment.

    Each gene independently mutates with probability ``mutation_rate``.
    A mutated element is accepted only if its full rect stays inside the
    unit canvas; otherwise its genes revert.  Aspect-locked chromosomes
    mutate width and height together.
    """
    rng = np.random.default_rng(seed)
    genes = c.genes.copy()
    n_free = 3 if c.aspect_locked else 4
    for row in range(genes.shape[0]):
        flags = rng.random(n_free) < cfg.mutation_rate
        noise = rng.normal(0.0, cfg.mutation_sigma, n_free)
        if not flags.any():
            continue
        cx, cy, w, h = genes[row]
        ncx = cx + noise[0] if flags[0] else cx
        ncy = cy + noise[1] if flags[1] else cy
        if c.aspect_locked:
            nw = w + noise[2] if flags[2] else w
            nh = nw * (h / w)
        else:
            nw = w + noise[2] if flags[2] else w
            nh = h + noise[3] if flags[3] else h
        if nw <= 0.0 or nh <= 0.0:
            continue
        if ncx - nw / 2 < 0.0 or ncx + nw / 2 > 1.0 or ncy - nh / 2 < 0.0 or ncy + nh / 2 > 1.0:
            continue
        genes[row] = (ncx, ncy, nw, nh)
    return c.with_genes(genes)


# ---------------------------------------------------------------------------
# the evolutionary loop
# ---------------------------------------------------------------------------


def _random_genes(
    rng: np.random.Generator, template: np.ndarray, aspect_locked: bool
) -> np.ndarray:
    genes = np.empty_like(template)
    for row in range(template.shape[0]):
        cx, cy = rng.uniform(0.0, 1.0, 2)
        if aspect_locked:
            w0, h0 = template[row, 2], template[row, 3]
            ar = h0 / w0
            lo = max(INIT_SIZE_LO, INIT_SIZE_LO / ar)
            hi = min(INIT_SIZE_HI, INIT_SIZE_HI / ar)
            if lo > hi:
                lo = hi  # extreme aspect: single feasible size
            w = rng.uniform(lo, hi)
            h = w * ar
        else:
            w = rng.uniform(INIT_SIZE_LO, INIT_SIZE_HI)
            h = rng.uniform(INIT_SIZE_LO, INIT_SIZE_HI)
        genes[row] = (cx, cy, w, h)
    return genes


def evolve(
    base: DesignDocument,
    refinable,
    fitness,
    cfg: GaConfig,
    aspect_locked: bool = False,
) -> tuple[DesignDocument, list[float]]:
    """Maximize ``fitness(doc)`` over the refinable genes.

    The population starts as one copy of the base genes plus uniformly
    random chromosomes.  Each generation keeps the top ``elitism``
    fraction and refills by crossover of survivor pairs plus mutation.
    Fitness values are cached by gene vector, and the loop stops once
    ``n_trials`` evaluations have been spent.  Returns the best-ever
    document and the per-generation best-fitness trace.
    """
    seed_seq = np.random.SeedSequence(cfg.seed)
    rng = np.random.default_rng(seed_seq)
    base_chrom = Chromosome.from_document(base, refinable, aspect_locked)

    population = [base_chrom]
    for _ in range(cfg.population_size - 1):
        population.append(base_chrom.with_genes(_random_genes(rng, base_chrom.genes, aspect_locked)))

    cache: dict[bytes, float] = {}
    evals = 0

    def evaluate(ch: Chromosome) -> None:
        nonlocal evals
        key = ch.key()
        if key in cache:
            ch.fitness = cache[key]
            return
        if evals >= cfg.n_trials:
            raise RefinerError("internal error: evaluation past budget")
        ch.fitness = float(fitness(ch.to_document()))
        cache[key] = ch.fitness
        evals += 1

    for ch in population:
        evaluate(ch)
    population.sort(key=lambda ch: -ch.fitness)
    best = population[0]
    trace = [best.fitness]

    n_keep = max(1, math.ceil(cfg.population_size * cfg.elitism))
    while evals < cfg.n_trials:
        survivors = population[:n_keep]
        children: list[Chromosome] = []
        new_evals = 0
        while len(children) < cfg.population_size - len(survivors):
            if len(survivors) >= 2:
                i = int(rng.integers(len(survivors)))
                j = int(rng.integers(len(survivors) - 1))
                j += j >= i
            else:
                i = j = 0
            child = snap_crossover(
                survivors[i], survivors[j], cfg.p, int(rng.integers(2**63))
            )
            child = mutate(child, cfg, int(rng.integers(2**63)))
            if child.key() not in cache and evals >= cfg.n_trials:
                break
            before = evals
            evaluate(child)
            new_evals += evals - before
            children.append(child)
        population = survivors + children
        population.sort(key=lambda ch: -ch.fitness)
        if population[0].fitness > best.fitness:
            best = population[0]
        trace.append(best.fitness)
        if new_evals == 0:
            break  # budget exhausted or a fully cached generation
    return best.to_document(), trace


@dataclass
class RefineResult:
    initial: DesignDocument
    refined: DesignDocument
    trace: list[float] = field(default_factory=list)


def _randomized_start(
    doc: DesignDocument, refinable, rng: np.random.Generator, aspect_locked: bool
) -> DesignDocument:
    chrom = Chromosome.from_document(doc, refinable, aspect_locked)
    return chrom.with_genes(_random_genes(rng, chrom.genes, aspect_locked)).to_document()


def refine_text(model, doc: DesignDocument, target_idx: int, cfg: GaConfig) -> RefineResult:
    """Re-place one text element: position and size, aspect ratio fixed.

    The target's center and scale are randomly initialized first, so the
    optimizer starts from an uninformed state.
    """
    if not 0 <= target_idx < len(doc.elements):
        raise RefinerError(f"target index {target_idx} out of range")
    if doc.elements[target_idx].kind is not ElementKind.TEXT:
        raise RefinerError(f"element {target_idx} is not a text element")
    init_seed, evolve_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    start = _randomized_start(
        doc, (target_idx,), np.random.default_rng(init_seed), aspect_locked=True
    )
    run_cfg = replace(cfg, seed=int(evolve_seed.generate_state(1)[0]))
    refined, trace = evolve(
        start, (target_idx,), lambda d: model.score_doc(d), run_cfg, aspect_locked=True
    )
    return RefineResult(initial=start, refined=refined, trace=trace)


def refine_all(model, doc: DesignDocument, cfg: GaConfig) -> RefineResult:
    """Re-place every non-background element from a randomized start."""
    refinable = doc.foreground_indices
    if not refinable:
        raise RefinerError("document has no refinable elements")
    init_seed, evolve_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    start = _randomized_start(
        doc, refinable, np.random.default_rng(init_seed), aspect_locked=False
    )
    run_cfg = replace(cfg, seed=int(evolve_seed.generate_state(1)[0]))
    refined, trace = evolve(
        start, refinable, lambda d: model.score_doc(d), run_cfg, aspect_locked=False
    )
    return RefineResult(initial=start, refined=refined, trace=trace)
