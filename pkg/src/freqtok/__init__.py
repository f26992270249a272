"""Frequency-aware token reduction for vision transformers.

Self-attention acts as a low-pass filter: stacking it drains the
high-frequency (mean-centered) part of the token features, and naive token
pruning or merging accelerates that collapse.  This package scores tokens
by their contribution to the high-pass part of the attention map, keeps
the high-frequency ones, folds the rest into windowed DC tokens, and can
reweight attention to re-emphasize what survives -- plus the machinery to
certify the underlying inequalities numerically, analyze spectra and rank
collapse layer by layer, count MACs, and search reduction schedules.
"""

from .cost import CostReport, LayerCost, mac_count, pareto_score
from .layout import CLS, DC, IMAGE, TokenLayout
from .model import (
    ForwardResult,
    LayerRecord,
    ModelConfig,
    Weights,
    embed_image,
    forward,
    init_weights,
    preset_config,
    pure_attention_variant,
    self_attention,
    weights_from_tensors,
    weights_to_tensors,
)
from .ndops import dft2, frobenius_norm, idft2, matmul, row_softmax
from .reduction import (
    DCState,
    EMPTY_SCHEDULE,
    ReductionSchedule,
    ReductionStep,
    SelectionResult,
    apply_reduction,
    baseline_merge,
    baseline_pool,
    baseline_prune_cls,
    fused_reweighted_apply,
    keep_count,
    make_dc_tokens,
    partition_windows,
    reweight_attention,
    select_hf_lf,
    selection_iou,
    token_importance,
)
from .rng import SeededRng
from .search import Candidate, SearchResult, SearchSpace, grid_search, make_cka_evaluator
from .spectral import (
    CollapseReport,
    DegenerateFeaturesError,
    SpectrumReport,
    awgn_probe,
    collapse_report,
    dc_similarity,
    decompose_attention,
    fill_token_grid,
    grid_spectrum,
    high_pass_center,
    linear_cka,
    token_spectrum,
)
from .synthetic import Grating, SyntheticRecipe, gen_synthetic
from .verify import (
    VerificationReport,
    check_convex_combination,
    check_flash_identity,
    check_jensen_dc,
    check_prop1,
    check_row_stochastic_contraction,
    check_subset_variance,
    run_suite,
)

__version__ = "0.1.0"
