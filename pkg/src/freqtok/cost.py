"""Multiply-accumulate cost model for the token-reduced transformer.

Per block with n tokens entering MSA and n' entering the FFN:

    MSA = 4 n d^2  +  2 n^2 d      (QKV + output projections; per-head
                                    logits and value aggregation sum to
                                    2 n^2 d across heads)
    FFN = 2 n' d (mlp_ratio d)

plus the patch embedding (n_img * d * p^2 C) and the classifier head
(d * num_classes).  A reduction at layer l happens after that layer's MSA
and before its FFN, so MSA bills the pre-reduction count and the FFN the
post-reduction count.  DC tokens and the CLS token are billed as full
tokens; a window of side w adds w^2 tokens at its reduction layer.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig
from .reduction import EMPTY_SCHEDULE, ReductionSchedule, keep_count


@dataclass(frozen=True)
class LayerCost:
    layer: int
    tokens_msa: int
    tokens_ffn: int
    msa_macs: int
    ffn_macs: int


@dataclass(frozen=True)
class CostReport:
    layers: tuple[LayerCost, ...]
    patch_embed_macs: int
    head_macs: int

    @property
    def msa_total(self) -> int:
        return sum(l.msa_macs for l in self.layers)

    @property
    def ffn_total(self) -> int:
        return sum(l.ffn_macs for l in self.layers)

    @property
    def total(self) -> int:
        return self.msa_total + self.ffn_total + self.patch_embed_macs + self.head_macs


def mac_count(config: ModelConfig, schedule: ReductionSchedule = EMPTY_SCHEDULE) -> CostReport:
    """MAC accounting for one forward pass under a reduction schedule."""
    schedule.validate_grid(config.grid_side, config.depth)
    d = config.dim
    hidden = config.ffn_hidden
    n_cls = 1 if config.has_cls else 0
    n_img = config.grid_side**2
    n_dc = 0

    layers = []
    for layer in range(1, config.depth + 1):
        n_msa = n_cls + n_img + n_dc
        step = schedule.step_at(layer)
        if step is not None:
            n_img = keep_count(n_img, step.rho)
            n_dc = step.window**2
        n_ffn = n_cls + n_img + n_dc
        msa = 4 * n_msa * d * d + 2 * n_msa * n_msa * d
        ffn = 2 * n_ffn * d * hidden
        layers.append(LayerCost(layer, n_msa, n_ffn, msa, ffn))

    patch = config.grid_side**2 * d * config.patch_size**2 * config.channels
    head = d * config.num_classes
    return CostReport(tuple(layers), patch, head)


def pareto_score(mac: float, mac_base: float, acc: float, acc_base: float) -> float:
    """(1 - mac / mac_base) * (acc / acc_base): relative compute saved,
    weighted by relative accuracy preserved."""
    if mac_base <= 0.0 or acc_base <= 0.0:
        raise ValueError("baselines must be positive")
    return (1.0 - mac / mac_base) * (acc / acc_base)
