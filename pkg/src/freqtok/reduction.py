"""Frequency-aware token reduction.

The mechanism, in order of application inside a scheduled layer:

1. score every image token by its column mean over the high-pass part of
   the attention maps (:func:`token_importance`);
2. keep the top-scoring HF tokens, fold the rest into one DC token per
   spatial window group (:func:`apply_reduction`);
3. optionally reweight attention in later layers so HF tokens are
   re-emphasized and DC tokens can be re-balanced
   (:func:`reweight_attention`, :func:`fused_reweighted_apply`).

Pruning, merging, and pooling baselines are provided for comparison, each
wrapped in a reducer usable as a hook in the model forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layout import CLS, DC, IMAGE, TokenLayout


@dataclass(frozen=True)
class ReductionStep:
    """One scheduled reduction: 1-based layer, removal ratio, window side."""

    layer: int
    rho: float
    window: int

    def __post_init__(self):
        if self.layer < 1:
            raise ValueError("layer indices are 1-based")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class ReductionSchedule:
    """Per-layer reduction directives plus per-head reweighting parameters.

    Layers must be strictly increasing and windows non-increasing; each
    window must divide the grid side it is applied to.  ``omega1`` and
    ``omega2`` default to zero vectors, which leaves attention untouched.
    """

    steps: tuple[ReductionStep, ...]
    omega1: np.ndarray | None = None
    omega2: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        layers = [s.layer for s in self.steps]
        if any(b <= a for a, b in zip(layers, layers[1:])):
            raise ValueError("schedule layers must be strictly increasing")
        windows = [s.window for s in self.steps]
        if any(b > a for a, b in zip(windows, windows[1:])):
            raise ValueError("window sizes must be non-increasing across steps")
        for name in ("omega1", "omega2"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=np.float64))

    def validate_grid(self, grid_side: int, depth: int | None = None):
        for s in self.steps:
            if grid_side % s.window != 0:
                raise ValueError(f"grid side {grid_side} not divisible by window {s.window}")
            if depth is not None and s.layer > depth:
                raise ValueError(f"schedule references layer {s.layer} > depth {depth}")

    def step_at(self, layer: int) -> ReductionStep | None:
        for s in self.steps:
            if s.layer == layer:
                return s
        return None

    def omegas(self, heads: int) -> tuple[np.ndarray, np.ndarray]:
        w1 = np.zeros(heads) if self.omega1 is None else self.omega1
        w2 = np.zeros(heads) if self.omega2 is None else self.omega2
        if w1.shape != (heads,) or w2.shape != (heads,):
            raise ValueError("omega vectors must have one entry per head")
        return w1, w2


EMPTY_SCHEDULE = ReductionSchedule(steps=())


@dataclass(frozen=True)
class SelectionResult:
    """Importance scores with the chosen HF / LF index sets."""

    importance: np.ndarray
    hf: np.ndarray
    lf: np.ndarray


@dataclass(frozen=True)
class DCState:
    """Per-group DC tokens carried between reduction layers.

    ``members`` is the divisor of the latest aggregation (LF members plus
    one per absorbed predecessor DC token); ``mass`` is the cumulative
    number of original image tokens each DC token stands for.  The step
    balance ``sum(inputs) == sum(HF) + sum(members * vectors)`` holds
    exactly, and masses add up across window-shrinking steps.
    """

    window: int
    vectors: np.ndarray   # (window^2, d)
    present: np.ndarray   # (window^2,) bool
    members: np.ndarray   # (window^2,) int
    mass: np.ndarray      # (window^2,) int

    @property
    def n_groups(self) -> int:
        return self.window * self.window


def keep_count(n_image: int, rho: float) -> int:
    """Number of HF tokens kept: floor(n * (1 - rho)) in real arithmetic.

    A 1e-9 nudge protects exact products (e.g. 15 * 0.6) from binary
    rounding just below an integer.
    """
    return int(math.floor(n_image * (1.0 - rho) + 1e-9))


def token_importance(attn: np.ndarray, candidates) -> np.ndarray:
    """Column-mean high-pass attention mass for each candidate token.

    ``attn`` is a stack of per-head row-stochastic maps, shape (h, n, n).
    The score of token k is the mean over heads and query rows of column k
    of ``A - (1/n) 11^T``.  Scores over all tokens sum to zero.
    """
    a = np.asarray(attn, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError("attention must have shape (heads, n, n)")
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("candidate set must be nonempty")
    h, n, _ = a.shape
    col_mass = a.sum(axis=(0, 1))              # per-column attention mass
    scores = (col_mass - h) / (n * h)          # uniform map contributes h per column
    return scores[candidates]


def select_hf_lf(importance, r: int, mode: str = "reduction") -> SelectionResult:
    """Split scored tokens into HF and LF sets.

    ``reduction`` mode keeps the top-r as HF and everything else as LF.
    ``analysis`` mode returns the top-r and bottom-r sets (requires
    2r <= n so the sets cannot overlap).  Ties break toward the lower
    index; returned indices refer to positions in ``importance``.
    """
    imp = np.asarray(importance, dtype=np.float64)
    n = imp.shape[0]
    if r > n:
        raise ValueError(f"r={r} exceeds candidate count {n}")
    order_desc = np.argsort(-imp, kind="stable")
    if mode == "reduction":
        if r == 0:
            raise ValueError("reduction requires r >= 1 (keeping zero HF tokens removes everything)")
        hf = order_desc[:r]
        lf = np.setdiff1d(np.arange(n), hf, assume_unique=False)
        return SelectionResult(imp, hf, np.sort(lf))
    if mode == "analysis":
        if 2 * r > n:
            raise ValueError("analysis mode needs 2r <= n for disjoint HF/LF sets")
        hf = order_desc[:r]
        rest = np.setdiff1d(np.arange(n), hf)
        order_asc = rest[np.argsort(imp[rest], kind="stable")]
        return SelectionResult(imp, hf, order_asc[:r])
    raise ValueError(f"unknown mode {mode!r}")


def partition_windows(layout: TokenLayout, window: int) -> np.ndarray:
    """Window-group id for each image token (aligned with image_indices()).

    The grid is cut into ``window x window`` equal blocks; the token at
    (row, col) lands in group ``(row // block) * window + col // block``.
    """
    side = layout.grid_side
    if window < 1:
        raise ValueError("window must be >= 1")
    if side % window != 0:
        raise ValueError(f"grid side {side} not divisible by window {window}")
    block = side // window
    coords = layout.image_coords()
    return (coords[:, 0] // block) * window + coords[:, 1] // block


def _map_groups(w_prev: int, w_new: int) -> np.ndarray:
    """Old-group -> new-group assignment when the window shrinks.

    Uses each old region's top-left corner; exact containment whenever
    ``w_new`` divides ``w_prev`` (the nested case).
    """
    old = np.arange(w_prev * w_prev)
    gr, gc = np.divmod(old, w_prev)
    return (gr * w_new // w_prev) * w_new + (gc * w_new // w_prev)


def make_dc_tokens(x, lf_sets, prev: DCState | None = None) -> DCState:
    """Aggregate each group's LF tokens into a DC token.

    Fresh groups take the plain mean of their LF members.  With a previous
    state, each inherited DC token counts as one extra member:
    ``(sum(LF) + dc_prev) / (|LF| + 1)``.  A group with no new LF tokens
    carries its DC token unchanged; with neither, it has no DC token.
    When the window shrinks, predecessors are re-assigned to the enclosing
    new group and averaged in with weight 1 each.
    """
    x = np.asarray(x, dtype=np.float64)
    n_groups = len(lf_sets)
    window = math.isqrt(n_groups)
    if window * window != n_groups:
        raise ValueError("lf_sets length must be a perfect square (one per window group)")
    d = x.shape[1]

    preds: list[list[tuple[np.ndarray, int]]] = [[] for _ in range(n_groups)]
    if prev is not None:
        if prev.window < window:
            raise ValueError("window may only shrink or stay fixed across steps")
        assign = _map_groups(prev.window, window)
        for g_old in range(prev.n_groups):
            if prev.present[g_old]:
                preds[assign[g_old]].append((prev.vectors[g_old], int(prev.mass[g_old])))

    vectors = np.zeros((n_groups, d))
    present = np.zeros(n_groups, dtype=bool)
    members = np.zeros(n_groups, dtype=np.int64)
    mass = np.zeros(n_groups, dtype=np.int64)
    for j in range(n_groups):
        lf = np.asarray(lf_sets[j], dtype=np.int64)
        p = preds[j]
        if lf.size == 0 and not p:
            continue
        present[j] = True
        if lf.size == 0:
            vecs = np.stack([v for v, _ in p])
            vectors[j] = vecs.mean(axis=0)
            members[j] = len(p)
            mass[j] = sum(m for _, m in p)
        else:
            total = x[lf].sum(axis=0) + sum((v for v, _ in p), np.zeros(d))
            members[j] = lf.size + len(p)
            vectors[j] = total / members[j]
            mass[j] = lf.size + sum(m for _, m in p)
    return DCState(window, vectors, present, members, mass)


def apply_reduction(
    x, attn, layout: TokenLayout, step: ReductionStep, prev: DCState | None = None
) -> tuple[np.ndarray, TokenLayout, DCState]:
    """One frequency-aware reduction step.

    Candidates are the current image tokens (the CLS token and inherited DC
    tokens never compete).  The ``keep_count`` highest-importance tokens
    survive in their original order; the rest are folded into per-group DC
    tokens.  Output order: CLS, HF image tokens, DC tokens by group id.
    """
    x = np.asarray(x, dtype=np.float64)
    candidates = layout.image_indices()
    n_img = candidates.size
    if n_img == 0:
        raise ValueError("no image tokens left to reduce")
    r = keep_count(n_img, step.rho)
    if r == 0:
        raise ValueError(f"rho={step.rho} would keep zero of {n_img} image tokens")

    sel = select_hf_lf(token_importance(attn, candidates), r, mode="reduction")
    hf_tokens = np.sort(candidates[sel.hf])
    lf_tokens = candidates[sel.lf]

    groups = partition_windows(layout, step.window)
    group_of = dict(zip(candidates.tolist(), groups.tolist()))
    lf_sets = [[] for _ in range(step.window**2)]
    for t in lf_tokens:
        lf_sets[group_of[int(t)]].append(int(t))
    dc_state = make_dc_tokens(x, lf_sets, prev)

    pieces, roles, rows, cols, grp = [], [], [], [], []
    cls_idx = layout.cls_index()
    if cls_idx is not None:
        pieces.append(x[cls_idx : cls_idx + 1])
        roles.append(CLS)
        rows.append(-1)
        cols.append(-1)
        grp.append(-1)
    pieces.append(x[hf_tokens])
    roles.extend([IMAGE] * hf_tokens.size)
    rows.extend(layout.rows[hf_tokens].tolist())
    cols.extend(layout.cols[hf_tokens].tolist())
    grp.extend([-1] * hf_tokens.size)
    for j in range(dc_state.n_groups):
        if dc_state.present[j]:
            pieces.append(dc_state.vectors[j : j + 1])
            roles.append(DC)
            rows.append(-1)
            cols.append(-1)
            grp.append(j)

    x2 = np.concatenate(pieces, axis=0)
    layout2 = TokenLayout(
        np.array(roles), np.array(rows), np.array(cols), np.array(grp),
        layout.grid_side, window=step.window,
    )
    return x2, layout2, dc_state


def reweight_attention(attn, layout: TokenLayout, omega1, omega2) -> np.ndarray:
    """Reweighted attention, one map per head, no row re-normalization.

    With per-head scalars w1, w2 and the uniform map U = (1/n) 11^T:

        A_hat = (w1 + 1) A - w1 U - (w1 - w2) A_dc

    where ``A_dc`` is A restricted to DC-token columns (zero elsewhere).
    Equivalently: low-pass part kept, high-pass part scaled by (w1 + 1),
    DC columns re-scaled by (w2 + 1) instead.  At w1 = w2 = 0 the result
    equals A exactly.
    """
    a = np.asarray(attn, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError("attention must have shape (heads, n, n)")
    h, n, _ = a.shape
    w1 = np.asarray(omega1, dtype=np.float64).reshape(h, 1, 1)
    w2 = np.asarray(omega2, dtype=np.float64).reshape(h, 1, 1)
    out = (w1 + 1.0) * a - w1 / n
    dc_cols = layout.dc_indices()
    if dc_cols.size:
        out[:, :, dc_cols] -= (w1 - w2) * a[:, :, dc_cols]
    return out


def fused_reweighted_apply(attn, values, layout: TokenLayout, omega1, omega2) -> np.ndarray:
    """Compute ``reweight_attention(...) @ V`` without materializing A_hat.

    Single-pass form compatible with fused attention kernels: given the
    plain product AV, only a broadcast value mean and the DC-column slice
    are needed:

        (w1 + 1) AV - w1 * mean_rows(V) - (w1 - w2) * A[:, dc] V[dc]
    """
    a = np.asarray(attn, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if a.ndim != 3 or v.ndim != 3 or a.shape[0] != v.shape[0] or a.shape[2] != v.shape[1]:
        raise ValueError("expected attention (h, n, n) and values (h, n, dv)")
    h = a.shape[0]
    w1 = np.asarray(omega1, dtype=np.float64).reshape(h, 1, 1)
    w2 = np.asarray(omega2, dtype=np.float64).reshape(h, 1, 1)
    av = a @ v
    out = (w1 + 1.0) * av - w1 * v.mean(axis=1, keepdims=True)
    dc = layout.dc_indices()
    if dc.size:
        out -= (w1 - w2) * (a[:, :, dc] @ v[:, dc, :])
    return out


def selection_iou(a, b) -> float:
    """Intersection-over-union of two token index sets."""
    sa, sb = set(np.asarray(a).tolist()), set(np.asarray(b).tolist())
    union = sa | sb
    return len(sa & sb) / len(union) if union else 1.0


# ---------------------------------------------------------------------------
# baselines


def baseline_prune_cls(attn, layout: TokenLayout, keep: int) -> np.ndarray:
    """Binary row-selection matrix keeping the image tokens the CLS token
    attends to most (head-averaged CLS attention row).

    Columns align with ``layout.image_indices()``; kept tokens appear in
    their original order.  Ties break toward the lower index.
    """
    cls_idx = layout.cls_index()
    if cls_idx is None:
        raise ValueError("CLS-attention pruning requires a CLS token")
    a = np.asarray(attn, dtype=np.float64)
    img = layout.image_indices()
    if keep > img.size:
        raise ValueError(f"cannot keep {keep} of {img.size} image tokens")
    scores = a[:, cls_idx, :].mean(axis=0)[img]
    chosen = np.sort(np.argsort(-scores, kind="stable")[:keep])
    m = np.zeros((keep, img.size))
    m[np.arange(keep), chosen] = 1.0
    return m


def baseline_merge(x, target: int) -> np.ndarray:
    """Greedy pairwise merging down to ``target`` rows.

    Repeatedly merges the pair of clusters whose mean vectors have the
    highest cosine similarity.  The returned matrix has one row per final
    cluster (ordered by smallest original member), each row averaging its
    members uniformly, so rows sum to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if target == 0:
        raise ValueError("target must be >= 1")
    if target >= n:
        raise ValueError(f"target {target} must be < token count {n}")

    sums = x.copy()
    counts = np.ones(n, dtype=np.int64)
    members: list[list[int]] = [[i] for i in range(n)]
    active = np.ones(n, dtype=bool)

    def _cos(u, v):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return float(u @ v) / (nu * nv)

    sim = np.full((n, n), -np.inf)
    means = sums / counts[:, None]
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = _cos(means[i], means[j])

    alive = n
    while alive > target:
        i, j = np.unravel_index(np.argmax(sim), sim.shape)  # first max: lowest (i, j)
        sums[i] += sums[j]
        counts[i] += counts[j]
        members[i].extend(members[j])
        active[j] = False
        alive -= 1
        sim[j, :] = -np.inf
        sim[:, j] = -np.inf
        mi = sums[i] / counts[i]
        for k in np.flatnonzero(active):
            if k == i:
                continue
            mk = sums[k] / counts[k]
            if k < i:
                sim[k, i] = _cos(mk, mi)
            else:
                sim[i, k] = _cos(mi, mk)

    order = sorted(np.flatnonzero(active), key=lambda c: min(members[c]))
    m = np.zeros((target, n))
    for row, c in enumerate(order):
        m[row, members[c]] = 1.0 / len(members[c])
    return m


def baseline_pool(x, layout: TokenLayout, window: int = 1) -> tuple[np.ndarray, TokenLayout]:
    """2x2 mean pooling over a full image-token grid; CLS passes through.

    Requires the current image tokens to cover the whole grid and the side
    to be divisible by 2 * window (so the pooled grid still admits the
    window partition).
    """
    x = np.asarray(x, dtype=np.float64)
    side = layout.grid_side
    if side % (2 * window) != 0:
        raise ValueError(f"grid side {side} not divisible by {2 * window}")
    img = layout.image_indices()
    if img.size != side * side:
        raise ValueError("pooling needs the full image-token grid")
    coords = layout.image_coords()
    grid = np.zeros((side, side, x.shape[1]))
    grid[coords[:, 0], coords[:, 1]] = x[img]
    pooled = grid.reshape(side // 2, 2, side // 2, 2, -1).mean(axis=(1, 3))

    s2 = side // 2
    pieces, roles, rows, cols = [], [], [], []
    cls_idx = layout.cls_index()
    if cls_idx is not None:
        pieces.append(x[cls_idx : cls_idx + 1])
        roles.append(CLS)
        rows.append(-1)
        cols.append(-1)
    pieces.append(pooled.reshape(s2 * s2, -1))
    rr, cc = np.divmod(np.arange(s2 * s2), s2)
    roles.extend([IMAGE] * (s2 * s2))
    rows.extend(rr.tolist())
    cols.extend(cc.tolist())
    x2 = np.concatenate(pieces, axis=0)
    layout2 = TokenLayout(
        np.array(roles), np.array(rows), np.array(cols),
        np.full(len(roles), -1), s2,
    )
    return x2, layout2


# ---------------------------------------------------------------------------
# reducer hooks for the model forward pass
#
# A reducer is a callable (x, attn, layout, step, state) -> (x', layout',
# state').  ``state`` is reducer-owned and threaded through the forward
# pass; the frequency reducer keeps its DCState there, the merge and pool
# baselines keep per-token grid coverage for later reconstruction.


def frequency_reducer(x, attn, layout, step, state):
    return apply_reduction(x, attn, layout, step, prev=state)


def matched_budget(n_image: int, step: ReductionStep) -> int:
    """Token budget the frequency reducer would produce: HF kept + DC tokens."""
    return keep_count(n_image, step.rho) + step.window**2


def _initial_coverage(layout: TokenLayout) -> list[tuple[int, ...]]:
    cov: list[tuple[int, ...]] = []
    for t in range(layout.n_tokens):
        if layout.roles[t] == IMAGE:
            cov.append((int(layout.rows[t] * layout.grid_side + layout.cols[t]),))
        else:
            cov.append(())
    return cov


def merge_reducer(x, attn, layout, step, state):
    """Baseline reducer: merge image tokens down to the matched budget."""
    x = np.asarray(x, dtype=np.float64)
    cov = state if state is not None else _initial_coverage(layout)
    img = layout.image_indices()
    target = matched_budget(img.size, step)
    m = baseline_merge(x[img], target)

    pieces, roles, rows, cols, cov2 = [], [], [], [], []
    cls_idx = layout.cls_index()
    if cls_idx is not None:
        pieces.append(x[cls_idx : cls_idx + 1])
        roles.append(CLS)
        rows.append(-1)
        cols.append(-1)
        cov2.append(())
    pieces.append(m @ x[img])
    for row in range(m.shape[0]):
        members = np.flatnonzero(m[row] > 0)
        first = img[members[0]]
        roles.append(IMAGE)
        rows.append(int(layout.rows[first]))
        cols.append(int(layout.cols[first]))
        cov2.append(tuple(p for t in members for p in cov[img[t]]))
    x2 = np.concatenate(pieces, axis=0)
    layout2 = TokenLayout(
        np.array(roles), np.array(rows), np.array(cols),
        np.full(len(roles), -1), layout.grid_side,
    )
    return x2, layout2, cov2


def pool_reducer(x, attn, layout, step, state):
    """Baseline reducer: 2x2 mean pooling (step.rho is ignored)."""
    cov = state if state is not None else _initial_coverage(layout)
    x2, layout2 = baseline_pool(x, layout)
    side = layout.grid_side
    pos_to_token = {
        int(layout.rows[i] * side + layout.cols[i]): int(i)
        for i in layout.image_indices()
    }
    cov2: list[tuple[int, ...]] = []
    for t in range(layout2.n_tokens):
        if layout2.roles[t] != IMAGE:
            cov2.append(())
            continue
        r2, c2 = int(layout2.rows[t]), int(layout2.cols[t])
        merged: list[int] = []
        for dr in (0, 1):
            for dc_ in (0, 1):
                src = pos_to_token[(2 * r2 + dr) * side + (2 * c2 + dc_)]
                merged.extend(cov[src])
        cov2.append(tuple(merged))
    return x2, layout2, cov2


def prune_cls_reducer(x, attn, layout, step, state):
    """Baseline reducer: keep the matched budget of tokens by CLS attention."""
    x = np.asarray(x, dtype=np.float64)
    img = layout.image_indices()
    keep = matched_budget(img.size, step)
    m = baseline_prune_cls(attn, layout, keep)
    kept = img[np.flatnonzero(m.sum(axis=0) > 0)]

    pieces, roles, rows, cols = [], [], [], []
    cls_idx = layout.cls_index()
    if cls_idx is not None:
        pieces.append(x[cls_idx : cls_idx + 1])
        roles.append(CLS)
        rows.append(-1)
        cols.append(-1)
    pieces.append(x[kept])
    roles.extend([IMAGE] * kept.size)
    rows.extend(layout.rows[kept].tolist())
    cols.extend(layout.cols[kept].tolist())
    x2 = np.concatenate(pieces, axis=0)
    layout2 = TokenLayout(
        np.array(roles), np.array(rows), np.array(cols),
        np.full(len(roles), -1), layout.grid_side,
    )
    return x2, layout2, state


def coverage_grid(x, layout: TokenLayout, coverage, side: int) -> np.ndarray:
    """(side^2, d) feature grid: each covered position takes its token's
    features; uncovered positions take the image-token mean."""
    x = np.asarray(x, dtype=np.float64)
    img = layout.image_indices()
    fill = x[img].mean(axis=0)
    grid = np.tile(fill, (side * side, 1))
    for t, positions in enumerate(coverage):
        for p in positions:
            grid[p] = x[t]
    return grid
