"""designfit: score the aesthetic goodness of vector designs and refine them.

The package pairs a small Siamese-trained CNN critic (over a design's
rendition plus a color-coded layout raster) with an elitist genetic
optimizer whose crossover snaps elements into grid slots and alignment
axes, using the critic as the fitness function.
"""

__version__ = "0.1.0"

from .document import (
    DesignDocument,
    DocumentError,
    Element,
    ElementKind,
    ParseError,
    Rect,
    ValidationError,
    element_rect,
    load_document,
    loads,
    dumps,
    read_document,
    rect_iou,
    save_document,
    write_document,
)
from .raster import occlude, render_layout, render_rendition, raster_pair, save_png
from .datagen import (
    DesignPair,
    Perturbation,
    build_pairs,
    generate_synthetic,
    is_good_design,
    perturb,
    recolor_bad,
)
from .scorer import (
    LossConfig,
    ScorerModel,
    TrainConfig,
    pair_loss,
    p_sim,
    rank_accuracy,
    score,
    sensitivity_grid,
    sensitivity_map,
    train,
)
from .refiner import (
    Chromosome,
    GaConfig,
    GridSlots,
    RefineResult,
    build_grid,
    evolve,
    grid_snap,
    mutate,
    refine_all,
    refine_text,
    snap_crossover,
    text_align,
)
from .metrics import EvalRecord, mean_bde, mean_iou, type_mean_iou

__all__ = [name for name in dir() if not name.startswith("_")]
