"""Reusable experiment flows behind the CLI subcommands.

Everything here consumes forward traces and produces plain records, so the
same code paths back both the command-line reports and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .layout import TokenLayout
from .model import ModelConfig, Weights, forward
from .reduction import (
    ReductionSchedule,
    ReductionStep,
    baseline_prune_cls,
    coverage_grid,
    frequency_reducer,
    keep_count,
    merge_reducer,
    pool_reducer,
    prune_cls_reducer,
    selection_iou,
    token_importance,
    select_hf_lf,
)
from .rng import SeededRng
from .spectral import (
    SpectrumReport,
    awgn_probe,
    dc_similarity,
    fill_token_grid,
    grid_spectrum,
    linear_cka,
    token_spectrum,
)


def layer_spectra(trace) -> list[SpectrumReport]:
    """Spectrum of every layer's output tokens."""
    return [token_spectrum(r.tokens_out, r.layout) for r in trace]


@dataclass(frozen=True)
class HfLfStats:
    """Per-layer comparison of the selected HF and LF token sets."""

    layer: int
    hf_energy: float
    lf_energy: float
    hf_dc_similarity: float
    lf_dc_similarity: float
    iou_with_cls_prune: float


def hf_lf_layer_stats(trace, tau: float = 0.25) -> list[HfLfStats]:
    """HF/LF set analysis per layer (expects an unreduced trace).

    Tokens are scored by each layer's own attention maps; the top and
    bottom ``floor(n * tau)`` image tokens form the HF and LF sets.  Layers
    whose trace entries changed token count mid-block are skipped.
    """
    out = []
    for r in trace:
        if r.tokens_pre.shape[0] != r.layout.n_tokens:
            continue
        candidates = r.layout.image_indices()
        n_img = candidates.size
        r_sel = int(n_img * tau)
        if r_sel < 1 or 2 * r_sel > n_img:
            continue
        sel = select_hf_lf(token_importance(r.attn, candidates), r_sel, mode="analysis")
        hf_tokens = candidates[sel.hf]
        lf_tokens = candidates[sel.lf]
        sims = dc_similarity(r.tokens_pre[candidates])
        hf_spec = token_spectrum(r.tokens_pre, r.layout, subset=hf_tokens)
        lf_spec = token_spectrum(r.tokens_pre, r.layout, subset=lf_tokens)
        if r.layout.cls_index() is not None:
            m = baseline_prune_cls(r.attn, r.layout, r_sel)
            cls_kept = candidates[np.flatnonzero(m.sum(axis=0) > 0)]
            iou = selection_iou(hf_tokens, cls_kept)
        else:
            iou = float("nan")
        out.append(
            HfLfStats(
                layer=r.layer,
                hf_energy=hf_spec.hf_band_energy,
                lf_energy=lf_spec.hf_band_energy,
                hf_dc_similarity=float(sims[sel.hf].mean()),
                lf_dc_similarity=float(sims[sel.lf].mean()),
                iou_with_cls_prune=iou,
            )
        )
    return out


def awgn_comparison(
    config: ModelConfig,
    weights: Weights,
    image,
    probe_layer: int,
    sigma: float,
    rng: SeededRng,
    tau: float = 0.25,
) -> dict[str, float]:
    """Final-feature CKA to the clean run after noising the HF or LF set.

    The sets are chosen from the clean run's attention at ``probe_layer``;
    noise is injected into that layer's output and the remaining layers are
    re-run.  Lower CKA means the perturbed set mattered more.
    """
    clean = forward(config, weights, image)
    base = fill_token_grid(clean.tokens, clean.layout)
    base_flat = base.reshape(-1, base.shape[-1])
    record = clean.trace[probe_layer - 1]
    candidates = record.layout.image_indices()
    r_sel = int(candidates.size * tau)
    sel = select_hf_lf(token_importance(record.attn, candidates), r_sel, mode="analysis")
    sets = {"hf": candidates[sel.hf], "lf": candidates[sel.lf]}

    out = {}
    for name, tokens in sets.items():
        noise_rng = rng.split(hash(name) & 0xFFFF)

        def hook(layer, x, layout, _tokens=tokens, _rng=noise_rng):
            if layer == probe_layer:
                return awgn_probe(x, _tokens, sigma, _rng)
            return x

        noisy = forward(config, weights, image, layer_hook=hook, collect_trace=False)
        g = fill_token_grid(noisy.tokens, noisy.layout)
        out[name] = linear_cka(g.reshape(-1, g.shape[-1]), base_flat)
    return out


@dataclass(frozen=True)
class MethodOutcome:
    method: str
    tokens_after: int
    hf_band_fraction: float
    hf_band_energy: float
    cka_to_base: float


COMPARE_METHODS = ("frequency", "prune_cls", "merge", "pool")


def compare_methods(
    config: ModelConfig,
    weights: Weights,
    image,
    schedule: ReductionSchedule,
    methods=COMPARE_METHODS,
) -> list[MethodOutcome]:
    """Run each reduction strategy at the schedule's first step and measure
    what survives at the final layer.

    All methods reduce at the same layer with a matched token budget
    (except pooling, which always keeps a quarter of the grid).  Merge and
    pool reconstruct the full grid from their member positions; frequency
    and CLS pruning place surviving tokens and mean-fill the rest.
    """
    if not schedule.steps:
        raise ValueError("compare needs a schedule with at least one step")
    single = ReductionSchedule((schedule.steps[0],), schedule.omega1, schedule.omega2)
    base = forward(config, weights, image, collect_trace=False)
    base_grid = fill_token_grid(base.tokens, base.layout)
    base_flat = base_grid.reshape(-1, base_grid.shape[-1])
    side = config.grid_side

    reducers = {
        "frequency": frequency_reducer,
        "prune_cls": prune_cls_reducer,
        "merge": merge_reducer,
        "pool": pool_reducer,
    }
    out = []
    for name in methods:
        res = forward(config, weights, image, schedule=single, reducer=reducers[name])
        if name in ("merge", "pool"):
            flat = coverage_grid(res.tokens, res.layout, res.reducer_state, side)
            grid = flat.reshape(side, side, -1)
        else:
            grid = fill_token_grid(res.tokens, res.layout)
        spec = grid_spectrum(grid)
        cka = linear_cka(grid.reshape(-1, grid.shape[-1]), base_flat)
        out.append(
            MethodOutcome(
                method=name,
                tokens_after=res.layout.n_tokens,
                hf_band_fraction=spec.hf_band_energy_fraction,
                hf_band_energy=spec.hf_band_energy,
                cka_to_base=cka,
            )
        )
    return out


def matched_pool_schedule(config: ModelConfig, layer: int) -> ReductionSchedule:
    """Single-step schedule whose frequency-reduction budget equals 2x2
    pooling: keep n/4 - 1 HF tokens plus one global DC token."""
    n_img = config.grid_side**2
    target = n_img // 4
    r = target - 1
    rho = 1.0 - (r + 0.5) / n_img
    if keep_count(n_img, rho) != r:
        raise ValueError("could not match the pooling budget")
    return ReductionSchedule((ReductionStep(layer, rho, 1),))
